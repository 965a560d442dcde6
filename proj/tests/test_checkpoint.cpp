#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "cmrm/checkpoint.hpp"
#include "cmrm/model.hpp"
#include "cmrm/plate.hpp"

using namespace cmrm;
namespace fs = std::filesystem;

namespace {

RunConfig ck_cfg(const std::string& mode = "pretrain") {
    RunConfig cfg;
    cfg.seed = 31337;
    cfg.mode = mode;
    cfg.model.img_h = 16;
    cfg.model.img_w = 48;
    cfg.model.d_v = 16;
    cfg.model.d = 16;
    cfg.model.enc_layers = 1;
    cfg.model.dec_layers = 1;
    cfg.model.plate_len = 3;
    cfg.model.cmrm_layers = 1;
    cfg.lora.rank = 2;
    return cfg;
}

} // namespace

TEST_CASE("save, load, save is byte-identical", "[checkpoint]") {
    Model model = Model::build(ck_cfg("D"), true);
    model.attach_lora();
    Checkpoint ck = checkpoint_from_model(model, {{"note", "roundtrip"}});
    ck.has_rng = true;
    ck.rng_state = 0xDEADBEEFull;
    const std::string bytes1 = serialize_checkpoint(ck);
    const Checkpoint back = deserialize_checkpoint(bytes1, "mem");
    const std::string bytes2 = serialize_checkpoint(back);
    CHECK(bytes1 == bytes2);
    CHECK(back.rng_state == 0xDEADBEEFull);
    CHECK(back.metadata.at("note") == "roundtrip");
}

TEST_CASE("corrupted config bytes are detected by the stored hash", "[checkpoint]") {
    Model model = Model::build(ck_cfg(), false);
    std::string bytes = serialize_checkpoint(checkpoint_from_model(model, {}));
    bytes[20] = static_cast<char>(bytes[20] ^ 0x01); // inside the config json
    CHECK_THROWS_AS(deserialize_checkpoint(bytes, "mem"), IoError);
}

TEST_CASE("model round trip restores f32-narrowed values", "[checkpoint]") {
    Model model = Model::build(ck_cfg("C"), true);
    const Checkpoint ck = checkpoint_from_model(model, {});
    Model back = model_from_checkpoint(ck);
    CHECK(back.cmrm.has_value());
    CHECK_FALSE(back.lora_attached);
    bool all_equal = true;
    model.visit_params([&](const std::string& name, Tensor& t, ParamGroup) {
        back.visit_params([&](const std::string& name2, Tensor& t2, ParamGroup) {
            if (name == name2) {
                for (std::size_t i = 0; i < t.numel(); ++i) {
                    // Narrow/widen once: loaded equals float(original).
                    if (t2.v()[i] != static_cast<double>(static_cast<float>(t.v()[i]))) {
                        all_equal = false;
                    }
                }
            }
        });
    });
    CHECK(all_equal);
}

TEST_CASE("missing tensors are contract errors", "[checkpoint]") {
    Model model = Model::build(ck_cfg(), false);
    Checkpoint ck = checkpoint_from_model(model, {});
    ck.tensors.erase("proj.w");
    // Hash only covers the config, so the table edit round-trips; the model
    // loader must notice.
    const Checkpoint back = deserialize_checkpoint(serialize_checkpoint(ck), "mem");
    CHECK_THROWS_AS(model_from_checkpoint(back), ContractError);
}

TEST_CASE("architecture fingerprint gates loading", "[checkpoint]") {
    Model model = Model::build(ck_cfg(), false);
    const Checkpoint ck = checkpoint_from_model(model, {});
    RunConfig other = ck_cfg();
    other.mode = "B";      // mode may differ
    other.seed = 1;        // seed may differ
    other.optim.epochs = 99;
    CHECK_NOTHROW(check_arch_compatible(ck, other, false));
    other.model.d = 32; // architecture may not
    CHECK_THROWS_AS(check_arch_compatible(ck, other, false), ConfigError);
    CHECK_NOTHROW(check_arch_compatible(ck, other, true));
}

TEST_CASE("optimizer moments round trip", "[checkpoint]") {
    Model model = Model::build(ck_cfg(), false);
    Checkpoint ck = checkpoint_from_model(model, {});
    ck.has_optimizer = true;
    ck.optimizer_step = 42;
    ck.optimizer_moments["proj.w"] = {std::vector<float>{1.f, 2.f}, std::vector<float>{3.f, 4.f}};
    const Checkpoint back = deserialize_checkpoint(serialize_checkpoint(ck), "mem");
    REQUIRE(back.has_optimizer);
    CHECK(back.optimizer_step == 42);
    CHECK(back.optimizer_moments.at("proj.w").first == std::vector<float>({1.f, 2.f}));
    CHECK(back.optimizer_moments.at("proj.w").second == std::vector<float>({3.f, 4.f}));
}

TEST_CASE("file save and load round trip", "[checkpoint]") {
    const fs::path path = fs::temp_directory_path() / "cmrm_ck_test.bin";
    Model model = Model::build(ck_cfg("B"), false);
    model.attach_lora();
    save_checkpoint(path, checkpoint_from_model(model, {{"k", 1}}));
    const Checkpoint back = load_checkpoint(path);
    CHECK(back.config().mode == "B");
    Model restored = model_from_checkpoint(back);
    CHECK(restored.lora_attached);
    fs::remove(path);
}

TEST_CASE("merged export folds the adapters into the base weights", "[checkpoint]") {
    Model model = Model::build(ck_cfg("B"), false);
    model.attach_lora();
    // Push B off zero so the merge is non-trivial.
    Rng rng(5);
    model.visit_params([&rng](const std::string& name, Tensor& t, ParamGroup g) {
        if (g == ParamGroup::Lora) {
            for (double& v : t.v()) v = rng.gaussian(0.0, 0.3);
        }
    });
    const PlateSample s = make_sample(3, 0, SplitProfile::Clean, 16, 48, 3);
    Tensor h = model.encode_project(s.image);
    Tensor adapted_logits = model.dec.teacher_logits(h, Vocab::encode(s.label));

    const Checkpoint merged = merged_checkpoint(model, {});
    CHECK(merged.config().mode == "A");
    for (const auto& [name, t] : merged.tensors) {
        CHECK(name.rfind("lora.", 0) != 0);
    }
    Model plain = model_from_checkpoint(merged);
    Tensor merged_logits =
        plain.dec.teacher_logits(plain.encode_project(s.image), Vocab::encode(s.label));
    // f32 storage bounds the agreement, not the merge algebra.
    for (std::size_t i = 0; i < merged_logits.numel(); ++i) {
        CHECK(merged_logits.v()[i] ==
              Catch::Approx(adapted_logits.v()[i]).margin(1e-4).epsilon(1e-5));
    }
}
