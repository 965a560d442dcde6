#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <string>

#include <json.hpp>

#include "cmrm/checkpoint.hpp"
#include "cmrm/config.hpp"
#include "cmrm/eval.hpp"
#include "cmrm/trainer.hpp"

using namespace cmrm;
using nlohmann::json;

#ifndef CMRM_SOURCE_DIR
#define CMRM_SOURCE_DIR "."
#endif

namespace {

json load_schema(const std::string& name) {
    std::ifstream f(std::string(CMRM_SOURCE_DIR) + "/schemas/" + name);
    REQUIRE(f.good());
    json j;
    f >> j;
    return j;
}

// Minimal structural validator: type / properties / required / items / enum /
// $ref into #/definitions. Enough to hold reports to their published shape.
bool validate(const json& schema, const json& value, const json& root, std::string& err);

bool check_type(const std::string& t, const json& v) {
    if (t == "object") return v.is_object();
    if (t == "array") return v.is_array();
    if (t == "string") return v.is_string();
    if (t == "boolean") return v.is_boolean();
    if (t == "integer") return v.is_number_integer() || v.is_number_unsigned();
    if (t == "number") return v.is_number();
    if (t == "null") return v.is_null();
    return false;
}

bool validate(const json& schema, const json& value, const json& root, std::string& err) {
    if (schema.contains("$ref")) {
        const std::string ref = schema.at("$ref").get<std::string>();
        const std::string prefix = "#/definitions/";
        REQUIRE(ref.rfind(prefix, 0) == 0);
        return validate(root.at("definitions").at(ref.substr(prefix.size())), value, root, err);
    }
    if (schema.contains("type") && !check_type(schema.at("type").get<std::string>(), value)) {
        err = "type mismatch: expected " + schema.at("type").get<std::string>() + " got " +
              value.dump().substr(0, 60);
        return false;
    }
    if (schema.contains("enum")) {
        bool hit = false;
        for (const auto& e : schema.at("enum")) {
            hit = hit || (e == value);
        }
        if (!hit) {
            err = "enum mismatch: " + value.dump();
            return false;
        }
    }
    if (schema.contains("required")) {
        for (const auto& k : schema.at("required")) {
            if (!value.contains(k.get<std::string>())) {
                err = "missing required key " + k.get<std::string>();
                return false;
            }
        }
    }
    if (schema.contains("properties") && value.is_object()) {
        for (const auto& [k, sub] : schema.at("properties").items()) {
            if (value.contains(k) && !validate(sub, value.at(k), root, err)) {
                err = k + ": " + err;
                return false;
            }
        }
    }
    if (schema.contains("items") && value.is_array()) {
        for (const auto& item : value) {
            if (!validate(schema.at("items"), item, root, err)) {
                return false;
            }
        }
    }
    return true;
}

RunConfig mini_cfg() {
    RunConfig cfg;
    cfg.seed = 81;
    cfg.model.img_h = 16;
    cfg.model.img_w = 48;
    cfg.model.d_v = 16;
    cfg.model.d = 16;
    cfg.model.enc_layers = 1;
    cfg.model.dec_layers = 1;
    cfg.model.plate_len = 3;
    cfg.model.cmrm_layers = 1;
    cfg.lora.rank = 2;
    cfg.optim.epochs = 1;
    cfg.optim.batch_size = 8;
    return cfg;
}

Dataset mini_dataset(std::uint64_t seed, std::size_t n, SplitProfile profile,
                     const RunConfig& cfg) {
    Dataset ds;
    ds.manifest.count = n;
    ds.manifest.seed = seed;
    ds.manifest.profile = profile_name(profile);
    ds.manifest.alphabet = plate_alphabet();
    ds.manifest.k = cfg.model.plate_len;
    for (std::uint64_t i = 0; i < n; ++i) {
        ds.samples.push_back(make_sample(seed, i, profile, cfg.model.img_h, cfg.model.img_w,
                                         cfg.model.plate_len));
    }
    return ds;
}

} // namespace

TEST_CASE("run config round trips through canonical json", "[formats]") {
    RunConfig cfg;
    cfg.seed = 42;
    cfg.mode = "B";
    cfg.optim.epochs = 9;
    const RunConfig back = RunConfig::from_json(json::parse(cfg.canonical_json()));
    CHECK(back.canonical_json() == cfg.canonical_json());
    CHECK(back.config_hash() == cfg.config_hash());
}

TEST_CASE("config hash is sensitive to every section", "[formats]") {
    RunConfig a;
    RunConfig b = a;
    CHECK(a.config_hash() == b.config_hash());
    b.seed += 1;
    CHECK(a.config_hash() != b.config_hash());
    RunConfig c = a;
    c.model.d = 32;
    CHECK(a.config_hash() != c.config_hash());
    // Architecture fingerprint ignores mode/optim/seed but not dims.
    RunConfig d = a;
    d.mode = "D";
    d.seed = 999;
    CHECK(a.arch_fingerprint() == d.arch_fingerprint());
    CHECK(a.arch_fingerprint() != c.arch_fingerprint());
}

TEST_CASE("default run config validates against the bundled schema", "[formats]") {
    const json schema = load_schema("run_config.schema.json");
    std::string err;
    RunConfig cfg;
    CHECK(validate(schema, cfg.to_json(), schema, err));
    INFO(err);
}

TEST_CASE("sha256 known answer", "[formats]") {
    // openssl dgst -sha256 of the ASCII string "abc".
    CHECK(sha256_hex("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("mini ablation report validates against the bundled schema", "[formats]") {
    const RunConfig cfg = mini_cfg();
    const Dataset clean = mini_dataset(1, 16, SplitProfile::Clean, cfg);
    const Dataset train = mini_dataset(2, 16, SplitProfile::TrainDegraded, cfg);
    const Dataset hard = mini_dataset(3, 8, SplitProfile::EvalHard, cfg);
    PretrainOutput base = pretrain_backbone(cfg, clean, nullptr);
    const Checkpoint base_ck = checkpoint_from_model(base.model, {});
    const json report = run_ablation(base_ck, train, hard, cfg, {5}, nullptr);

    const json schema = load_schema("ablation_report.schema.json");
    std::string err;
    const bool ok = validate(schema, report, schema, err);
    INFO(err);
    CHECK(ok);
    CHECK(report.at("incomplete") == false);

    // Mode A's accuracy equals direct evaluation of the base checkpoint.
    Model base_model = assemble_for_mode(cfg, base_ck, Mode::A);
    const EvalReport direct = evaluate(base_model, hard, 0);
    CHECK(report.at("modes").at("A").at("median_accuracy").get<double>() == direct.accuracy);
}

TEST_CASE("validator flags structural violations", "[formats]") {
    const json schema = load_schema("ablation_report.schema.json");
    json bogus = {{"schema", "cmrm-ablation-report-v1"}};
    std::string err;
    CHECK_FALSE(validate(schema, bogus, schema, err));
}
