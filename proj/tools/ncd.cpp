// ncd: command-line driver for the discovery pipeline.
//
//   ncd pretrain    --config run.json
//   ncd finetune    --config run.json
//   ncd discover    --config run.json [--no_bce] [--no_ce] [--no_consistency]
//   ncd incremental --config run.json
//   ncd evaluate    --config run.json --checkpoint runs/x/discover.ckpt
//   ncd sweep_k     --config run.json --k 1,5,10,64
//   ncd all         --config run.json          (pretrain, finetune, discover, incremental)
//   ncd defaults                               (prints the default config)
//
// Exit codes: 0 success, 1 invalid input, 2 missing or incompatible
// prerequisite, 3 non-finite numerics.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ncd/config.hpp"
#include "ncd/run.hpp"

namespace {

struct Overrides {
    std::string config_path;
    std::string output_dir;
    std::optional<std::uint64_t> seed;
    bool no_bce = false, no_ce = false, no_consistency = false, no_selfsup = false, exclude_diagonal = false;
};

void add_common(CLI::App* sub, Overrides& o) {
    sub->add_option("-c,--config", o.config_path, "JSON run config (defaults apply to missing keys)");
    sub->add_option("-o,--out", o.output_dir, "override output_dir");
    sub->add_option("--seed", o.seed, "override the run seed");
    sub->add_flag("--no_bce", o.no_bce, "drop the pairwise BCE term");
    sub->add_flag("--no_ce", o.no_ce, "drop the labelled cross-entropy term in joint training");
    sub->add_flag("--no_consistency", o.no_consistency, "drop the MSE consistency term");
    sub->add_flag("--no_selfsup", o.no_selfsup, "skip rotation pretraining; stage 2 trains every block");
    sub->add_flag("--bce_exclude_diagonal", o.exclude_diagonal, "leave i == j pairs out of the BCE sum");
}

ncd::RunConfig resolve(const Overrides& o) {
    ncd::RunConfig cfg = o.config_path.empty() ? ncd::RunConfig{} : ncd::load_config(o.config_path);
    if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
    if (o.seed) cfg.seed = *o.seed;
    cfg.ablation.no_bce |= o.no_bce;
    cfg.ablation.no_ce |= o.no_ce;
    cfg.ablation.no_consistency |= o.no_consistency;
    cfg.ablation.no_selfsup |= o.no_selfsup;
    cfg.ablation.bce_exclude_diagonal |= o.exclude_diagonal;
    ncd::validate(cfg);
    return cfg;
}

void print_stage(const ncd::CommandResult& r) {
    std::printf("%s: %zu epochs, digest %s\n", r.report.stage.c_str(), r.report.epochs.size(),
                r.summary["config_digest"].get<std::string>().c_str());
    for (auto& [k, v] : r.summary.items()) {
        if (v.is_number_float()) std::printf("  %s = %.4f\n", k.c_str(), v.get<double>());
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Novel category discovery with rank statistics"};
    app.require_subcommand(1);
    Overrides o;
    std::string checkpoint;
    std::vector<std::size_t> ks;

    auto* pretrain = app.add_subcommand("pretrain", "stage 1: rotation-prediction pretext");
    auto* finetune = app.add_subcommand("finetune", "stage 2: supervised fine-tune on labelled classes");
    auto* discover = app.add_subcommand("discover", "stage 3: joint CE + BCE + consistency training");
    auto* incremental = app.add_subcommand("incremental", "stage 3 with the labelled head extended to new classes");
    auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint against the configured data");
    auto* sweep = app.add_subcommand("sweep_k", "stage 3 for several k from one stage-2 checkpoint");
    auto* all = app.add_subcommand("all", "pretrain, finetune, discover and incremental in sequence");
    auto* defaults = app.add_subcommand("defaults", "print the default config as JSON");
    for (auto* sub : {pretrain, finetune, discover, incremental, evaluate, sweep, all}) add_common(sub, o);
    evaluate->add_option("--checkpoint", checkpoint, "checkpoint to score")->required();
    sweep->add_option("--k", ks, "comma-separated k values")->delimiter(',')->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (defaults->parsed()) {
            std::cout << ncd::to_json(ncd::RunConfig{}).dump(2) << "\n";
            return 0;
        }
        const ncd::RunConfig cfg = resolve(o);
        if (pretrain->parsed() || all->parsed()) print_stage(ncd::cmd_pretrain(cfg));
        if (finetune->parsed() || all->parsed()) print_stage(ncd::cmd_finetune(cfg));
        if (discover->parsed() || all->parsed()) print_stage(ncd::cmd_discover(cfg));
        if (incremental->parsed() || all->parsed()) print_stage(ncd::cmd_incremental(cfg));
        if (evaluate->parsed()) std::cout << ncd::cmd_evaluate(cfg, checkpoint).dump(2) << "\n";
        if (sweep->parsed()) {
            const auto res = ncd::cmd_sweep_k(cfg, ks);
            std::printf("k,unlabelled_acc (from finetune digest %s)\n", ncd::digest_hex(res.shared_digest).c_str());
            for (const auto& row : res.rows) std::printf("%zu,%.4f\n", row.k, row.unlabelled_acc);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ncd::exit_code_for(e));
    }
    return 0;
}
