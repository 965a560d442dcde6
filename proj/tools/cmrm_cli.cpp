// Command-line front end: data generation, the two training phases, metrics,
// the ablation, inference, attention export and the gradient-check suite.
// stdout carries exactly one JSON object per invocation; logs go to stderr.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cmrm/attention.hpp"
#include "cmrm/checkpoint.hpp"
#include "cmrm/config.hpp"
#include "cmrm/eval.hpp"
#include "cmrm/gradcheck_suite.hpp"
#include "cmrm/image.hpp"
#include "cmrm/model.hpp"
#include "cmrm/plate.hpp"
#include "cmrm/trainer.hpp"

namespace {

using nlohmann::json;

cmrm::RunConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw cmrm::IoError("cannot open config file: " + path);
    }
    json j;
    f >> j;
    return cmrm::RunConfig::from_json(j);
}

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch_size;
    bool force = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool with_train_flags = false) {
    cmd->add_option("--config", flags.config_path, "JSON config file (flags override values)");
    cmd->add_option("--seed", flags.seed, "RNG seed override");
    if (with_train_flags) {
        cmd->add_option("--epochs", flags.epochs, "epoch budget override");
        cmd->add_option("--batch-size", flags.batch_size, "batch size override");
    }
    cmd->add_flag("--force", flags.force, "overwrite guarded outputs / skip compat checks");
}

cmrm::RunConfig effective_config(const CommonFlags& flags,
                                 const cmrm::RunConfig& base = cmrm::RunConfig{}) {
    cmrm::RunConfig cfg = flags.config_path.empty() ? base : load_config_file(flags.config_path);
    if (flags.seed) cfg.seed = *flags.seed;
    if (flags.epochs) cfg.optim.epochs = *flags.epochs;
    if (flags.batch_size) cfg.optim.batch_size = *flags.batch_size;
    cfg.validate();
    return cfg;
}

// Non-reproducible outputs (wall-clock content) refuse to overwrite.
void guard_output(const std::filesystem::path& path, bool force) {
    if (!force && std::filesystem::exists(path)) {
        throw cmrm::IoError("refusing to overwrite " + path.string() + " (pass --force)");
    }
}

std::unique_ptr<std::ofstream> open_log(const std::string& path, bool force) {
    if (path.empty()) {
        return nullptr;
    }
    guard_output(path, force);
    auto f = std::make_unique<std::ofstream>(path, std::ios::binary);
    if (!*f) {
        throw cmrm::IoError("cannot open log file: " + path);
    }
    return f;
}

void emit(const json& summary) { std::cout << summary.dump() << std::endl; }

cmrm::Checkpoint model_checkpoint(cmrm::Model& model, json metadata, std::uint64_t rng_state) {
    cmrm::Checkpoint ck = cmrm::checkpoint_from_model(model, std::move(metadata));
    ck.has_rng = true;
    ck.rng_state = rng_state;
    return ck;
}

int run(int argc, char** argv) {
    CLI::App app{"structure-aware license plate recognition workbench"};
    app.require_subcommand(1);

    // ---- gen-data ----
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic plate dataset");
    CommonFlags gen_flags;
    std::uint64_t gen_count = 0;
    std::string gen_profile, gen_out;
    gen->add_option("--count", gen_count, "number of samples")->required();
    gen->add_option("--profile", gen_profile, "clean|train-degraded|eval-hard")->required();
    gen->add_option("--out", gen_out, "output directory")->required();
    add_common(gen, gen_flags);
    gen->callback([&] {
        const cmrm::RunConfig cfg = effective_config(gen_flags);
        const cmrm::SplitProfile profile = cmrm::parse_profile(gen_profile);
        const cmrm::DatasetManifest m =
            cmrm::make_dataset(gen_count, cfg.seed, profile, gen_out, cfg.model.img_h,
                               cfg.model.img_w, cfg.model.plate_len);
        emit({{"command", "gen-data"}, {"out", gen_out}, {"manifest", m.to_json()}});
    });

    // ---- pretrain ----
    auto* pre = app.add_subcommand("pretrain", "train the clean-plate backbone");
    CommonFlags pre_flags;
    std::string pre_data, pre_out, pre_log;
    pre->add_option("--data", pre_data, "clean training dataset dir")->required();
    pre->add_option("--out", pre_out, "output checkpoint path")->required();
    pre->add_option("--log", pre_log, "NDJSON progress log file");
    add_common(pre, pre_flags, true);
    pre->callback([&] {
        cmrm::RunConfig cfg = effective_config(pre_flags);
        cfg.mode = "pretrain";
        cfg.data.train_dir = pre_data;
        const cmrm::Dataset ds = cmrm::load_dataset(pre_data);
        auto log = open_log(pre_log, pre_flags.force);
        std::ostream* progress = log ? static_cast<std::ostream*>(log.get()) : &std::cerr;
        cmrm::PretrainOutput out = cmrm::pretrain_backbone(cfg, ds, progress);
        cmrm::save_checkpoint(pre_out,
                              model_checkpoint(out.model, out.metadata,
                                               out.train.shuffle_rng_state));
        json summary = out.metadata;
        summary["command"] = "pretrain";
        summary["out"] = pre_out;
        summary["config_hash"] = out.model.cfg.config_hash();
        emit(summary);
    });

    // ---- adapt ----
    auto* ad = app.add_subcommand("adapt", "adapt a pretrained backbone in mode A|B|C|D");
    CommonFlags ad_flags;
    std::string ad_base, ad_data, ad_mode, ad_out, ad_log;
    ad->add_option("--base", ad_base, "pretrained backbone checkpoint")->required();
    ad->add_option("--data", ad_data, "degraded training dataset dir")->required();
    ad->add_option("--mode", ad_mode, "A|B|C|D")->required();
    ad->add_option("--out", ad_out, "output checkpoint path")->required();
    ad->add_option("--log", ad_log, "NDJSON progress log file");
    add_common(ad, ad_flags, true);
    ad->callback([&] {
        const cmrm::Checkpoint base = cmrm::load_checkpoint(ad_base);
        cmrm::RunConfig cfg = effective_config(ad_flags, base.config());
        cmrm::check_arch_compatible(base, cfg, ad_flags.force);
        cfg.data.train_dir = ad_data;
        const cmrm::Mode mode = cmrm::parse_mode(ad_mode);
        const cmrm::Dataset ds = cmrm::load_dataset(ad_data);
        auto log = open_log(ad_log, ad_flags.force);
        std::ostream* progress = log ? static_cast<std::ostream*>(log.get()) : &std::cerr;
        cmrm::AdaptOutput out = cmrm::adapt(cfg, base, ds, mode, progress);
        cmrm::save_checkpoint(ad_out,
                              model_checkpoint(out.model, out.metadata,
                                               out.train.shuffle_rng_state));
        json summary = out.metadata;
        summary["command"] = "adapt";
        summary["out"] = ad_out;
        summary["config_hash"] = out.model.cfg.config_hash();
        emit(summary);
    });

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    CommonFlags ev_flags;
    std::string ev_ckpt, ev_data, ev_out, ev_preds;
    std::size_t ev_latency_iters = 50;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--data", ev_data, "evaluation dataset dir")->required();
    ev->add_option("--out", ev_out, "report JSON path");
    ev->add_option("--preds", ev_preds, "per-sample predictions TSV path");
    ev->add_option("--latency-iters", ev_latency_iters, "timed inference iterations (0 = skip)");
    add_common(ev, ev_flags);
    ev->callback([&] {
        const cmrm::Checkpoint ck = cmrm::load_checkpoint(ev_ckpt);
        if (!ev_flags.config_path.empty()) {
            cmrm::check_arch_compatible(ck, load_config_file(ev_flags.config_path),
                                        ev_flags.force);
        }
        const cmrm::Model model = cmrm::model_from_checkpoint(ck);
        const cmrm::Dataset ds = cmrm::load_dataset(ev_data);
        std::vector<cmrm::PredictionRow> rows;
        const cmrm::EvalReport report =
            cmrm::evaluate(model, ds, ev_latency_iters, ev_preds.empty() ? nullptr : &rows);
        json summary = report.to_json();
        summary["command"] = "eval";
        if (!ev_out.empty()) {
            guard_output(ev_out, ev_flags.force);
            std::ofstream f(ev_out, std::ios::binary);
            f << report.to_json().dump(2) << "\n";
            summary["out"] = ev_out;
        }
        if (!ev_preds.empty()) {
            guard_output(ev_preds, ev_flags.force);
            cmrm::write_predictions_tsv(ev_preds, rows);
            summary["preds"] = ev_preds;
        }
        emit(summary);
    });

    // ---- infer ----
    auto* in = app.add_subcommand("infer", "read one plate image");
    CommonFlags in_flags;
    std::string in_ckpt, in_image;
    in->add_option("--ckpt", in_ckpt, "checkpoint path")->required();
    in->add_option("--image", in_image, "PGM image path")->required();
    add_common(in, in_flags);
    in->callback([&] {
        const cmrm::Model model = cmrm::model_from_checkpoint(cmrm::load_checkpoint(in_ckpt));
        const cmrm::Image img = cmrm::read_pgm(in_image);
        const auto t0 = std::chrono::steady_clock::now();
        const std::string pred = model.infer(img);
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        emit({{"pred", pred}, {"latency_ms", ms}});
    });

    // ---- ablate ----
    auto* ab = app.add_subcommand("ablate", "run the A/B/C/D ablation across seeds");
    CommonFlags ab_flags;
    std::string ab_base, ab_train, ab_eval, ab_out;
    std::size_t ab_seeds = 3;
    ab->add_option("--base", ab_base, "pretrained backbone checkpoint")->required();
    ab->add_option("--train", ab_train, "degraded training dataset dir")->required();
    ab->add_option("--eval", ab_eval, "held-out degraded dataset dir")->required();
    ab->add_option("--seeds", ab_seeds, "number of seeds (seed, seed+1, ...)");
    ab->add_option("--out", ab_out, "report JSON path")->required();
    add_common(ab, ab_flags, true);
    ab->callback([&] {
        const cmrm::Checkpoint base = cmrm::load_checkpoint(ab_base);
        cmrm::RunConfig cfg = effective_config(ab_flags, base.config());
        cmrm::check_arch_compatible(base, cfg, ab_flags.force);
        cfg.data.train_dir = ab_train;
        cfg.data.eval_dir = ab_eval;
        const cmrm::Dataset train_ds = cmrm::load_dataset(ab_train);
        const cmrm::Dataset eval_ds = cmrm::load_dataset(ab_eval);
        std::vector<std::uint64_t> seeds;
        for (std::size_t i = 0; i < ab_seeds; ++i) {
            seeds.push_back(cfg.seed + i);
        }
        const json report = cmrm::run_ablation(base, train_ds, eval_ds, cfg, seeds, &std::cerr);
        std::ofstream f(ab_out, std::ios::binary);
        if (!f) {
            throw cmrm::IoError("cannot open " + ab_out);
        }
        f << report.dump(2) << "\n";
        emit({{"command", "ablate"},
              {"out", ab_out},
              {"ordering", report.at("ordering")},
              {"incomplete", report.at("incomplete")}});
    });

    // ---- export-attn ----
    auto* ex = app.add_subcommand("export-attn", "export per-slot attention maps");
    CommonFlags ex_flags;
    std::string ex_ckpt, ex_image, ex_out;
    ex->add_option("--ckpt", ex_ckpt, "CMRM checkpoint path (mode C or D)")->required();
    ex->add_option("--image", ex_image, "PGM image path")->required();
    ex->add_option("--out", ex_out, "output directory")->required();
    add_common(ex, ex_flags);
    ex->callback([&] {
        const cmrm::Model model = cmrm::model_from_checkpoint(cmrm::load_checkpoint(ex_ckpt));
        const cmrm::Image img = cmrm::read_pgm(ex_image);
        const cmrm::SlotAttentionMaps maps = cmrm::export_slot_attention(model, img);
        cmrm::write_attention_maps(maps, ex_out);
        json cols = json::array();
        for (std::size_t s = 0; s < maps.k; ++s) {
            cols.push_back(maps.argmax_col(s));
        }
        emit({{"command", "export-attn"},
              {"out", ex_out},
              {"k", maps.k},
              {"argmax_cols", cols},
              {"monotone_columns", maps.monotone_columns()}});
    });

    // ---- gradcheck ----
    auto* gc = app.add_subcommand("gradcheck", "finite-difference verification suite");
    CommonFlags gc_flags;
    add_common(gc, gc_flags);
    gc->callback([&] {
        const cmrm::RunConfig cfg = effective_config(gc_flags);
        const auto t0 = std::chrono::steady_clock::now();
        const cmrm::GradCheckReport report =
            cmrm::run_gradcheck_cases(cmrm::standard_gradcheck_cases(cfg.seed));
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        for (const auto& o : report.outcomes) {
            std::cerr << (o.pass ? "ok   " : "FAIL ") << o.name << "  rel_err=" << o.error
                      << "  tol=" << o.tolerance << "\n";
        }
        json worst;
        if (const auto* w = report.worst()) {
            worst = {{"name", w->name}, {"error", w->error}, {"tolerance", w->tolerance}};
        }
        emit({{"command", "gradcheck"},
              {"pass", report.all_pass},
              {"checks", report.outcomes.size()},
              {"worst", worst},
              {"runtime_s", secs}});
        if (!report.all_pass) {
            throw cmrm::NumericError("gradcheck failed: " + report.worst_name);
        }
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cerr << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n\n" << app.help();
        return 2;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
