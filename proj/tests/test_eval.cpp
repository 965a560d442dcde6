#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <string>
#include <vector>

#include "cmrm/eval.hpp"
#include "cmrm/plate.hpp"

using namespace cmrm;

namespace {

// Independent oracle: plain recursion with memoization over suffix indices.
int edit_distance_recursive(const std::string& a, const std::string& b) {
    std::vector<std::vector<int>> memo(a.size() + 1, std::vector<int>(b.size() + 1, -1));
    auto rec = [&](auto&& self, std::size_t i, std::size_t j) -> int {
        if (i == a.size()) return static_cast<int>(b.size() - j);
        if (j == b.size()) return static_cast<int>(a.size() - i);
        int& m = memo[i][j];
        if (m >= 0) return m;
        const int sub = self(self, i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
        const int del = self(self, i + 1, j) + 1;
        const int ins = self(self, i, j + 1) + 1;
        return m = std::min({sub, del, ins});
    };
    return rec(rec, 0, 0);
}

std::vector<std::string> all_strings_up_to_3() {
    const std::string sym = "abc";
    std::vector<std::string> out = {""};
    for (char c1 : sym) {
        out.push_back(std::string(1, c1));
        for (char c2 : sym) {
            out.push_back({c1, c2});
            for (char c3 : sym) {
                out.push_back({c1, c2, c3});
            }
        }
    }
    return out;
}

RunConfig eval_cfg() {
    RunConfig cfg;
    cfg.seed = 555;
    cfg.model.img_h = 16;
    cfg.model.img_w = 48;
    cfg.model.d_v = 16;
    cfg.model.d = 16;
    cfg.model.enc_layers = 1;
    cfg.model.dec_layers = 1;
    cfg.model.plate_len = 3;
    cfg.model.cmrm_layers = 1;
    return cfg;
}

Dataset small_dataset(std::uint64_t seed, std::size_t n, const RunConfig& cfg) {
    Dataset ds;
    ds.manifest.count = n;
    ds.manifest.seed = seed;
    ds.manifest.profile = "train-degraded";
    ds.manifest.alphabet = plate_alphabet();
    ds.manifest.k = cfg.model.plate_len;
    for (std::uint64_t i = 0; i < n; ++i) {
        ds.samples.push_back(make_sample(seed, i, SplitProfile::TrainDegraded, cfg.model.img_h,
                                         cfg.model.img_w, cfg.model.plate_len));
    }
    return ds;
}

} // namespace

TEST_CASE("edit distance fixtures", "[eval]") {
    CHECK(edit_distance("ABC1234", "ABC1234") == 0);
    CHECK(edit_distance("ABC1234", "ABC123") == 1);
    CHECK(edit_distance("KITTEN", "SITTING") == 3);
    CHECK(edit_distance("", "xyz") == 3);
}

TEST_CASE("edit distance matches the exhaustive recursive oracle", "[eval]") {
    const auto strings = all_strings_up_to_3();
    for (const std::string& a : strings) {
        for (const std::string& b : strings) {
            CHECK(edit_distance(a, b) == edit_distance_recursive(a, b));
        }
    }
}

TEST_CASE("edit distance is a metric on short strings", "[eval]") {
    const auto strings = all_strings_up_to_3();
    for (const std::string& a : strings) {
        CHECK(edit_distance(a, a) == 0);
        for (const std::string& b : strings) {
            CHECK(edit_distance(a, b) == edit_distance(b, a));
            for (const std::string& c : strings) {
                CHECK(edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c));
            }
        }
    }
}

TEST_CASE("cer fixtures", "[eval]") {
    CHECK(cer("ABC1234", "ABC1234") == 0.0);
    CHECK(cer("AB12845", "AB12345") == Catch::Approx(1.0 / 7.0).margin(1e-12));
    CHECK(cer("", "ABC1234") == 1.0);
    CHECK_THROWS_AS(cer("X", ""), ContractError);
}

TEST_CASE("oracle predictions give accuracy one and cer zero", "[eval]") {
    const RunConfig cfg = eval_cfg();
    const Dataset ds = small_dataset(1, 12, cfg);
    std::vector<std::string> gt;
    for (const auto& s : ds.samples) gt.push_back(s.label);
    const EvalReport report = aggregate_predictions(ds, gt, cfg.model.plate_len);
    CHECK(report.accuracy == 1.0);
    CHECK(report.mean_cer == 0.0);
    for (double p : report.per_position_accuracy) {
        CHECK(p == 1.0);
    }
    // accuracy == 1 implies cer == 0 on the same predictions.
}

TEST_CASE("report accuracy equals a manual recount of emitted predictions", "[eval]") {
    const RunConfig cfg = eval_cfg();
    const Dataset ds = small_dataset(2, 20, cfg);
    Model model = Model::build(cfg, false); // untrained
    std::vector<PredictionRow> rows;
    const EvalReport report = evaluate(model, ds, 0, &rows);
    REQUIRE(rows.size() == ds.samples.size());
    std::size_t hits = 0;
    double cer_sum = 0.0;
    for (const PredictionRow& r : rows) {
        hits += (r.pred == r.gt) ? 1 : 0;
        cer_sum += cer(r.pred, r.gt);
    }
    CHECK(report.accuracy == static_cast<double>(hits) / 20.0);
    CHECK(report.mean_cer == Catch::Approx(cer_sum / 20.0).margin(1e-12));
}

TEST_CASE("untrained model sits at chance level", "[eval]") {
    const RunConfig cfg = eval_cfg();
    const Dataset ds = small_dataset(3, 50, cfg);
    Model model = Model::build(cfg, false);
    const EvalReport report = evaluate(model, ds, 0);
    CHECK(report.accuracy == 0.0); // 50 / 36^3 odds of a single hit are ~1e-3
}

TEST_CASE("evaluation aggregates are order-invariant", "[eval]") {
    const RunConfig cfg = eval_cfg();
    Dataset ds = small_dataset(4, 16, cfg);
    Model model = Model::build(cfg, false);
    const EvalReport before = evaluate(model, ds, 0);
    Rng rng(13);
    rng.shuffle(ds.samples);
    const EvalReport after = evaluate(model, ds, 0);
    CHECK(before.accuracy == after.accuracy);
    CHECK(before.mean_cer == after.mean_cer);
    CHECK(before.per_position_accuracy == after.per_position_accuracy);
}

TEST_CASE("evaluate rejects mismatched plate lengths", "[eval]") {
    const RunConfig cfg = eval_cfg();
    Dataset ds = small_dataset(5, 4, cfg);
    ds.manifest.k = 7;
    Model model = Model::build(cfg, false);
    CHECK_THROWS_AS(evaluate(model, ds, 0), ConfigError);
}

TEST_CASE("latency stats come from at least the requested iterations", "[eval]") {
    const RunConfig cfg = eval_cfg();
    const Dataset ds = small_dataset(6, 4, cfg);
    Model model = Model::build(cfg, false);
    const LatencyStats stats = measure_latency(model, ds, 50, 5);
    CHECK(stats.iterations == 50);
    CHECK(stats.mean_ms > 0.0);
    CHECK(stats.p50_ms > 0.0);
    CHECK(stats.p95_ms >= stats.p50_ms);
}

TEST_CASE("median helper", "[eval]") {
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}
