#pragma once

// Stage commands over a RunConfig. Each command reads the previous stage's
// checkpoint from the output directory, runs one stage, and writes
//   <stage>.ckpt  checkpoint carrying the stage digest
//   <stage>.csv   epoch,ce,bce,mse,omega,total,unlabelled_acc
//   <stage>.json  summary with final metrics, digest and seed
// Re-running a command with the same config rewrites identical bytes.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ncd/checkpoint.hpp"
#include "ncd/config.hpp"
#include "ncd/data.hpp"
#include "ncd/errors.hpp"
#include "ncd/eval.hpp"
#include "ncd/idx.hpp"
#include "ncd/model.hpp"
#include "ncd/pipeline.hpp"

namespace ncd {

enum class ExitCode : int { ok = 0, validation = 1, dependency = 2, numeric = 3 };

// Maps an exception escaping a command to the process exit code.
inline ExitCode exit_code_for(const std::exception& e) {
    if (dynamic_cast<const NumericError*>(&e)) return ExitCode::numeric;
    if (dynamic_cast<const DependencyError*>(&e) || dynamic_cast<const IncompatibleError*>(&e) ||
        dynamic_cast<const StateError*>(&e)) {
        return ExitCode::dependency;
    }
    return ExitCode::validation;
}

struct LoadedData {
    SplitResult train;
    std::optional<SplitResult> test;
};

inline LoadedData load_data(const RunConfig& cfg) {
    Dataset train, test;
    bool have_test = false;
    if (cfg.dataset.kind == "synthetic") {
        const auto& s = cfg.dataset.synthetic;
        train = synth_shapes(s.n_per_class, s.classes, s.seed);
        if (s.test_per_class > 0) {
            test = synth_shapes(s.test_per_class, s.classes, fnv1a("held-out", s.seed));
            have_test = true;
        }
    } else {
        const auto& s = cfg.dataset.idx;
        train = read_idx(s.train_images, s.train_labels);
        if (s.max_per_class > 0) train = cap_per_class(train, s.max_per_class);
        if (!s.test_images.empty()) {
            test = read_idx(s.test_images, s.test_labels);
            have_test = true;
        }
        const ImageShape want{cfg.backbone.channels, cfg.backbone.height, cfg.backbone.width};
        if (train.shape.channels != want.channels || train.shape.height != want.height || train.shape.width != want.width) {
            throw ConfigError({"backbone: input dims " + std::to_string(want.channels) + "x" + std::to_string(want.height) + "x" +
                               std::to_string(want.width) + " do not match the IDX images " +
                               std::to_string(train.shape.channels) + "x" + std::to_string(train.shape.height) + "x" +
                               std::to_string(train.shape.width)});
        }
        for (const auto* list : {&cfg.split.labelled_classes, &cfg.split.unlabelled_classes}) {
            for (int c : *list) {
                if (c < 0 || static_cast<std::size_t>(c) >= train.num_classes) {
                    throw ConfigError({"split: class " + std::to_string(c) + " does not occur in the IDX labels"});
                }
            }
        }
    }
    LoadedData out{apply_split(train, cfg.split), std::nullopt};
    if (have_test) out.test = apply_split(test, cfg.split);
    return out;
}

struct Artifacts {
    std::filesystem::path dir;

    std::filesystem::path checkpoint(const std::string& stage) const { return dir / (stage + ".ckpt"); }
    std::filesystem::path csv(const std::string& stage) const { return dir / (stage + ".csv"); }
    std::filesystem::path json(const std::string& stage) const { return dir / (stage + ".json"); }
};

struct CommandResult {
    RunReport report;
    nlohmann::json summary;
};

namespace detail {

inline std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << text;
}

inline std::string report_csv(const RunReport& r) {
    std::string out = "epoch,ce,bce,mse,omega,total,unlabelled_acc\n";
    for (const auto& e : r.epochs) {
        out += std::to_string(e.epoch) + "," + fmt17(e.loss.ce) + "," + fmt17(e.loss.bce) + "," + fmt17(e.loss.mse) + "," +
               fmt17(e.loss.omega) + "," + fmt17(e.loss.total) + "," + fmt17(e.acc) + "\n";
    }
    return out;
}

// JSON has no NaN; absent metrics become null.
inline nlohmann::json metric(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline Model require_checkpoint(const Artifacts& art, const std::string& stage, const char* producer, const RunConfig& cfg,
                                std::initializer_list<Stage> allowed) {
    const auto path = art.checkpoint(stage);
    if (!std::filesystem::exists(path)) {
        throw DependencyError("missing " + path.string() + ": run `" + producer + "` first");
    }
    Model m = load_checkpoint(path, cfg.backbone);
    bool ok = false;
    for (Stage s : allowed) ok = ok || m.stage == s;
    if (!ok) throw StateError(path.string() + " holds a " + stage_name(m.stage) + " model");
    const std::uint64_t want = stage_digest(cfg, m.stage);
    if (m.config_digest != want) {
        throw IncompatibleError(path.string() + " was produced under config digest " + digest_hex(m.config_digest) +
                                " but the current config gives " + digest_hex(want) + "; rerun `" + producer + "`");
    }
    return m;
}

inline nlohmann::json base_summary(const RunReport& r) {
    return {{"stage", r.stage},
            {"seed", r.seed},
            {"config_digest", digest_hex(r.config_digest)},
            {"epochs", r.epochs.size()},
            {"checkpoint", std::filesystem::path(r.checkpoint_path).filename().string()},
            {"train_acc", metric(r.train_acc)},
            {"final_unlabelled_acc", metric(r.final_acc())}};
}

inline CommandResult finish_stage(Model& m, RunReport report, const RunConfig& cfg, const Artifacts& art, nlohmann::json extra) {
    m.config_digest = stage_digest(cfg, m.stage);
    report.config_digest = m.config_digest;
    report.seed = cfg.seed;
    report.checkpoint_path = art.checkpoint(report.stage).string();
    std::filesystem::create_directories(art.dir);
    save_checkpoint(m, report.checkpoint_path);
    write_text(art.csv(report.stage), report_csv(report));
    nlohmann::json summary = base_summary(report);
    for (auto it = extra.begin(); it != extra.end(); ++it) summary[it.key()] = it.value();
    write_text(art.json(report.stage), summary.dump(2) + "\n");
    return {std::move(report), std::move(summary)};
}

inline StageHooks unlabelled_hooks(const Dataset& unlabelled) {
    StageHooks h;
    h.epoch_eval = [&unlabelled](const Model& m) { return unlabelled_acc(m, unlabelled); };
    return h;
}

inline nlohmann::json discovery_metrics(const Model& m, const LoadedData& data) {
    nlohmann::json j;
    j["unlabelled_acc"] = unlabelled_acc(m, data.train.unlabelled);
    j["labelled_acc"] = labelled_acc(m, data.train.labelled);
    if (data.test) j["test_unlabelled_acc"] = unlabelled_acc(m, data.test->unlabelled);
    return j;
}

inline nlohmann::json incremental_metrics(const Model& m, const LoadedData& data) {
    const SplitResult& eval_split = data.test ? *data.test : data.train;
    const IncrementalReport r = incremental_report(m, eval_split.labelled, eval_split.unlabelled);
    return {{"old_acc", r.old_acc},
            {"new_acc", r.new_acc},
            {"all_acc", r.all_acc},
            {"evaluated_on", data.test ? "test" : "train"},
            {"unlabelled_head_acc", unlabelled_acc(m, data.train.unlabelled)}};
}

} // namespace detail

// Stage 1, or a fresh initialization when self-supervision is ablated.
inline CommandResult cmd_pretrain(const RunConfig& cfg) {
    validate(cfg);
    const LoadedData data = load_data(cfg);
    Model m(cfg.backbone, cfg.seed);
    RunReport report;
    report.stage = "pretrain";
    if (!cfg.ablation.no_selfsup) {
        report = stage1_selfsup(m, concat(strip_labels(data.train.labelled), strip_labels(data.train.unlabelled)), cfg.pretrain);
    }
    return detail::finish_stage(m, std::move(report), cfg, Artifacts{cfg.output_dir},
                                {{"self_supervised", !cfg.ablation.no_selfsup}});
}

inline CommandResult cmd_finetune(const RunConfig& cfg) {
    validate(cfg);
    const Artifacts art{cfg.output_dir};
    Model m = detail::require_checkpoint(art, "pretrain", "pretrain", cfg, {Stage::pretrained, Stage::initial});
    const LoadedData data = load_data(cfg);
    StageConfig sc = cfg.finetune;
    sc.frozen_blocks = cfg.finetune_frozen_blocks();
    RunReport report = stage2_supervised(m, data.train.labelled, sc);
    nlohmann::json extra;
    const Tensor feats = extract_features(m, data.train.unlabelled.images);
    const auto clusters = kmeans_baseline(feats, data.train.unlabelled.num_classes, cfg.seed);
    extra["kmeans_unlabelled_acc"] = clustering_acc(clusters, data.train.unlabelled.labels, data.train.unlabelled.num_classes).acc;
    if (data.test) extra["test_labelled_acc"] = labelled_acc(m, data.test->labelled);
    return detail::finish_stage(m, std::move(report), cfg, art, extra);
}

inline CommandResult cmd_discover(const RunConfig& cfg) {
    validate(cfg);
    const Artifacts art{cfg.output_dir};
    Model m = detail::require_checkpoint(art, "finetune", "finetune", cfg, {Stage::finetuned});
    const LoadedData data = load_data(cfg);
    RunReport report = stage3_joint(m, data.train.labelled, strip_labels(data.train.unlabelled),
                                    data.train.unlabelled.num_classes, cfg.discover, cfg.ablation,
                                    detail::unlabelled_hooks(data.train.unlabelled));
    return detail::finish_stage(m, std::move(report), cfg, art, detail::discovery_metrics(m, data));
}

inline CommandResult cmd_incremental(const RunConfig& cfg) {
    validate(cfg);
    const Artifacts art{cfg.output_dir};
    Model m = detail::require_checkpoint(art, "finetune", "finetune", cfg, {Stage::finetuned});
    const LoadedData data = load_data(cfg);
    RunReport report = run_incremental(m, data.train.labelled, strip_labels(data.train.unlabelled),
                                       data.train.unlabelled.num_classes, cfg.discover, cfg.ablation,
                                       detail::unlabelled_hooks(data.train.unlabelled));
    return detail::finish_stage(m, std::move(report), cfg, art, detail::incremental_metrics(m, data));
}

// Scores any checkpoint produced under this config. Writes evaluate.json.
inline nlohmann::json cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& checkpoint) {
    validate(cfg);
    if (!std::filesystem::exists(checkpoint)) throw DependencyError("missing checkpoint " + checkpoint.string());
    const Model m = load_checkpoint(checkpoint, cfg.backbone);
    const std::uint64_t want = stage_digest(cfg, m.stage);
    if (m.config_digest != want) {
        throw IncompatibleError(checkpoint.string() + " carries config digest " + digest_hex(m.config_digest) +
                                " but the current config gives " + digest_hex(want));
    }
    const LoadedData data = load_data(cfg);
    nlohmann::json j;
    j["checkpoint"] = checkpoint.filename().string();
    j["stage"] = stage_name(m.stage);
    j["config_digest"] = digest_hex(m.config_digest);
    j["seed"] = cfg.seed;
    switch (m.stage) {
        case Stage::initial:
        case Stage::pretrained: {
            const Tensor f = extract_features(m, data.train.unlabelled.images);
            const auto c = kmeans_baseline(f, data.train.unlabelled.num_classes, cfg.seed);
            j["kmeans_unlabelled_acc"] = clustering_acc(c, data.train.unlabelled.labels, data.train.unlabelled.num_classes).acc;
            break;
        }
        case Stage::finetuned: {
            const Tensor f = extract_features(m, data.train.unlabelled.images);
            const auto c = kmeans_baseline(f, data.train.unlabelled.num_classes, cfg.seed);
            j["kmeans_unlabelled_acc"] = clustering_acc(c, data.train.unlabelled.labels, data.train.unlabelled.num_classes).acc;
            j["labelled_acc"] = labelled_acc(m, data.train.labelled);
            if (data.test) j["test_labelled_acc"] = labelled_acc(m, data.test->labelled);
            break;
        }
        case Stage::discovered:
            j.update(detail::discovery_metrics(m, data));
            break;
        case Stage::incremental:
            j.update(detail::incremental_metrics(m, data));
            break;
    }
    std::filesystem::create_directories(cfg.output_dir);
    detail::write_text(Artifacts{cfg.output_dir}.json("evaluate"), j.dump(2) + "\n");
    return j;
}

struct SweepRow {
    std::size_t k = 0;
    double unlabelled_acc = 0.0;
    std::uint64_t digest = 0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::uint64_t shared_digest = 0;  // digest of the stage-2 checkpoint every row started from
};

// Stage 3 once per k, each from the same stage-2 checkpoint. Writes sweep_k.csv.
inline SweepResult cmd_sweep_k(const RunConfig& cfg, const std::vector<std::size_t>& ks) {
    validate(cfg);
    if (ks.empty()) throw ArgumentError("sweep_k needs at least one k");
    const std::size_t d = cfg.backbone.feature_dim();
    for (std::size_t k : ks) {
        if (k < 1 || k > d) throw ArgumentError("sweep_k: k=" + std::to_string(k) + " outside [1, " + std::to_string(d) + "]");
    }
    const Artifacts art{cfg.output_dir};
    const Model base = detail::require_checkpoint(art, "finetune", "finetune", cfg, {Stage::finetuned});
    const std::string base_bytes = encode_checkpoint(base);
    const LoadedData data = load_data(cfg);
    SweepResult out;
    out.shared_digest = base.config_digest;
    std::string csv = "k,unlabelled_acc,config_digest,finetune_digest\n";
    for (std::size_t k : ks) {
        RunConfig c = cfg;
        c.discover.k = k;
        Model m = decode_checkpoint(base_bytes);
        const RunReport r = stage3_joint(m, data.train.labelled, strip_labels(data.train.unlabelled),
                                         data.train.unlabelled.num_classes, c.discover, c.ablation,
                                         detail::unlabelled_hooks(data.train.unlabelled));
        const SweepRow row{k, r.final_acc(), stage_digest(c, Stage::discovered)};
        out.rows.push_back(row);
        csv += std::to_string(k) + "," + detail::fmt17(row.unlabelled_acc) + "," + digest_hex(row.digest) + "," +
               digest_hex(out.shared_digest) + "\n";
    }
    std::filesystem::create_directories(art.dir);
    detail::write_text(art.dir / "sweep_k.csv", csv);
    return out;
}

} // namespace ncd
