#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmrm/checkpoint.hpp"
#include "cmrm/config.hpp"
#include "cmrm/model.hpp"
#include "cmrm/plate.hpp"
#include "cmrm/trainer.hpp"

namespace cmrm {

/// Levenshtein distance, unit costs, classic dynamic program.
inline int edit_distance(const std::string& a, const std::string& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<int> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<int>(i);
        for (std::size_t j = 1; j <= m; ++j) {
            const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

// Character error rate, normalized by the ground-truth length.
inline double cer(const std::string& pred, const std::string& gt) {
    if (gt.empty()) {
        throw ContractError("cer: ground truth must be non-empty");
    }
    return static_cast<double>(edit_distance(pred, gt)) / static_cast<double>(gt.size());
}

struct LatencyStats {
    double mean_ms = 0.0;
    double p50_ms = 0.0;
    double p95_ms = 0.0;
    std::size_t iterations = 0;
};

struct PredictionRow {
    std::string filename;
    std::string gt;
    std::string pred;
    double cer_value = 0.0;
};

struct EvalReport {
    double accuracy = 0.0;
    double mean_cer = 0.0;
    std::vector<double> per_position_accuracy;
    LatencyStats latency;
    std::size_t sample_count = 0;
    std::string config_hash;
    std::string mode;

    nlohmann::json to_json() const {
        return nlohmann::json{{"accuracy", accuracy},
                              {"cer", mean_cer},
                              {"per_position_accuracy", per_position_accuracy},
                              {"latency_ms",
                               {{"mean", latency.mean_ms},
                                {"p50", latency.p50_ms},
                                {"p95", latency.p95_ms},
                                {"iterations", latency.iterations}}},
                              {"sample_count", sample_count},
                              {"config_hash", config_hash},
                              {"mode", mode}};
    }
};

/// Wall-clock over the full encode -> inject -> greedy-decode path, file I/O
/// excluded, single-threaded: `warmups` discarded, then at least `iters`
/// timed calls cycling over the dataset's head.
inline LatencyStats measure_latency(const Model& model, const Dataset& ds, std::size_t iters = 50,
                                    std::size_t warmups = 5) {
    using Clock = std::chrono::steady_clock;
    LatencyStats stats;
    if (ds.samples.empty() || iters == 0) {
        return stats;
    }
    const std::size_t pool = std::min<std::size_t>(ds.samples.size(), iters);
    for (std::size_t i = 0; i < warmups; ++i) {
        (void)model.infer(ds.samples[i % pool].image);
    }
    std::vector<double> ms;
    ms.reserve(iters);
    for (std::size_t i = 0; i < iters; ++i) {
        const auto t0 = Clock::now();
        (void)model.infer(ds.samples[i % pool].image);
        ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
    }
    std::sort(ms.begin(), ms.end());
    stats.iterations = iters;
    stats.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
    stats.p50_ms = ms[ms.size() / 2];
    stats.p95_ms = ms[std::min(ms.size() - 1, static_cast<std::size_t>(
                                                  std::ceil(0.95 * static_cast<double>(ms.size())) - 1))];
    return stats;
}

/// Aggregation over precomputed predictions. Order-invariant by construction:
/// exact/per-position tallies are integers and the CER mean is summed over
/// sorted values.
inline EvalReport aggregate_predictions(const Dataset& ds,
                                        const std::vector<std::string>& preds, std::size_t k,
                                        std::vector<PredictionRow>* rows = nullptr) {
    if (preds.size() != ds.samples.size()) {
        throw ContractError("aggregate_predictions: " + std::to_string(preds.size()) +
                            " predictions for " + std::to_string(ds.samples.size()) + " samples");
    }
    EvalReport report;
    report.sample_count = ds.samples.size();
    std::vector<std::size_t> pos_hits(k, 0);
    std::size_t exact = 0;
    std::vector<double> cers;
    cers.reserve(ds.samples.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const PlateSample& s = ds.samples[i];
        const std::string& pred = preds[i];
        const double c = cer(pred, s.label);
        cers.push_back(c);
        if (pred == s.label) {
            ++exact;
        }
        for (std::size_t p = 0; p < k; ++p) {
            if (p < pred.size() && pred[p] == s.label[p]) {
                ++pos_hits[p];
            }
        }
        if (rows != nullptr) {
            rows->push_back(PredictionRow{sample_filename(i), s.label, pred, c});
        }
    }
    const double n = static_cast<double>(ds.samples.size());
    report.accuracy = ds.samples.empty() ? 0.0 : static_cast<double>(exact) / n;
    std::sort(cers.begin(), cers.end());
    report.mean_cer =
        ds.samples.empty() ? 0.0 : std::accumulate(cers.begin(), cers.end(), 0.0) / n;
    report.per_position_accuracy.resize(k);
    for (std::size_t p = 0; p < k; ++p) {
        report.per_position_accuracy[p] =
            ds.samples.empty() ? 0.0 : static_cast<double>(pos_hits[p]) / n;
    }
    return report;
}

/// Greedy-decodes every sample and aggregates exact match, mean CER and
/// per-position accuracy. latency_iters = 0 skips the timing pass (used
/// inside the ablation).
inline EvalReport evaluate(const Model& model, const Dataset& ds, std::size_t latency_iters = 50,
                           std::vector<PredictionRow>* predictions = nullptr) {
    if (ds.manifest.k != model.cfg.model.plate_len) {
        throw ConfigError("dataset plate length " + std::to_string(ds.manifest.k) +
                          " does not match model plate length " +
                          std::to_string(model.cfg.model.plate_len));
    }
    std::vector<std::string> preds;
    preds.reserve(ds.samples.size());
    for (const PlateSample& s : ds.samples) {
        preds.push_back(model.infer(s.image));
    }
    EvalReport report =
        aggregate_predictions(ds, preds, model.cfg.model.plate_len, predictions);
    report.config_hash = model.cfg.config_hash();
    report.mode = model.cfg.mode;
    if (latency_iters > 0) {
        report.latency = measure_latency(model, ds, latency_iters);
    }
    return report;
}

inline void write_predictions_tsv(const std::filesystem::path& path,
                                  const std::vector<PredictionRow>& rows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open for writing: " + path.string());
    }
    for (const PredictionRow& r : rows) {
        f << r.filename << "\t" << r.gt << "\t" << r.pred << "\t" << r.cer_value << "\n";
    }
    if (!f) {
        throw IoError("short write: " + path.string());
    }
}

// ---------------------------------------------------------------------------
// ablation
// ---------------------------------------------------------------------------

inline double median(std::vector<double> v) {
    if (v.empty()) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Runs adapt() in modes A..D for every seed, evaluates each on the held-out
/// set, and reports per-mode medians plus the expected ordering verdict
/// (D best, A worst; D - A targeted at >= 10 accuracy points).
inline nlohmann::json run_ablation(const Checkpoint& base, const Dataset& train_ds,
                                   const Dataset& eval_ds, const RunConfig& cfg,
                                   const std::vector<std::uint64_t>& seeds,
                                   std::ostream* progress = nullptr) {
    if (seeds.empty()) {
        throw ContractError("run_ablation: need at least one seed");
    }
    const Mode modes[4] = {Mode::A, Mode::B, Mode::C, Mode::D};
    nlohmann::json per_mode = nlohmann::json::object();
    bool incomplete = false;
    std::map<std::string, std::vector<double>> accs, cers_by_mode;
    for (Mode mode : modes) {
        per_mode[mode_name(mode)] = {{"per_seed", nlohmann::json::array()}};
    }
    for (std::uint64_t seed : seeds) {
        for (Mode mode : modes) {
            RunConfig run_cfg = cfg;
            run_cfg.seed = seed;
            run_cfg.mode = mode_name(mode);
            nlohmann::json entry = {{"seed", seed}};
            try {
                AdaptOutput adapted = adapt(run_cfg, base, train_ds, mode, nullptr);
                EvalReport rep = evaluate(adapted.model, eval_ds, 0);
                entry["accuracy"] = rep.accuracy;
                entry["cer"] = rep.mean_cer;
                entry["train_steps"] = adapted.train.log.size();
                accs[mode_name(mode)].push_back(rep.accuracy);
                cers_by_mode[mode_name(mode)].push_back(rep.mean_cer);
                if (progress != nullptr) {
                    (*progress) << nlohmann::json{{"event", "ablation"},
                                                  {"seed", seed},
                                                  {"mode", mode_name(mode)},
                                                  {"accuracy", rep.accuracy},
                                                  {"cer", rep.mean_cer}}
                                       .dump()
                                << "\n";
                }
            } catch (const std::exception& e) {
                entry["error"] = e.what();
                incomplete = true;
            }
            per_mode[mode_name(mode)]["per_seed"].push_back(entry);
        }
    }
    nlohmann::json ordering;
    double med[4] = {0, 0, 0, 0};
    for (int i = 0; i < 4; ++i) {
        const std::string name = mode_name(modes[i]);
        med[i] = median(accs[name]);
        per_mode[name]["median_accuracy"] = med[i];
        per_mode[name]["median_cer"] = median(cers_by_mode[name]);
    }
    const double a = med[0], b = med[1], c = med[2], d = med[3];
    ordering["d_gt_b"] = d > b;
    ordering["d_gt_c"] = d > c;
    ordering["b_gt_a"] = b > a;
    ordering["c_gt_a"] = c > a;
    ordering["d_minus_a"] = d - a;
    ordering["d_minus_a_ge_10pts"] = (d - a) >= 0.10;
    ordering["pass"] = (d > b) && (d > c) && (b > a) && (c > a) && (d - a) >= 0.10;
    nlohmann::json seeds_json = nlohmann::json::array();
    for (std::uint64_t s : seeds) seeds_json.push_back(s);
    return nlohmann::json{{"schema", "cmrm-ablation-report-v1"},
                          {"seeds", seeds_json},
                          {"modes", per_mode},
                          {"ordering", ordering},
                          {"incomplete", incomplete},
                          {"config", cfg.to_json()},
                          {"config_hash", cfg.config_hash()},
                          {"train_samples", train_ds.samples.size()},
                          {"eval_samples", eval_ds.samples.size()}};
}

} // namespace cmrm
