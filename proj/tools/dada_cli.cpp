#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dada.h"

namespace {

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

int finish(dada_status st, const char* command) {
    if (st == DADA_OK) return 0;
    std::fprintf(stderr, "dada %s: %s\n", command, dada_last_error());
    // Argument problems are configuration errors from the user's point of view.
    return st == DADA_ERR_INVALID_ARGUMENT ? DADA_ERR_CONFIG : static_cast<int>(st);
}

void log_to_stderr(const char* msg, void*) { std::fprintf(stderr, "[dada] %s\n", msg); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Depth-aware domain adaptation for semantic segmentation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", dada_version());
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Suppress progress messages");

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    std::string spec, domain, gen_out;
    std::uint64_t gen_seed = 0, count = 0;
    gen->add_option("--spec", spec, "Scene spec file (key = value)")->check(CLI::ExistingFile);
    gen->add_option("--domain", domain, "source or target")->required()->check(CLI::IsMember({"source", "target"}));
    gen->add_option("--seed", gen_seed, "Dataset seed")->required();
    gen->add_option("--count", count, "Number of scenes")->required()->check(CLI::PositiveNumber);
    gen->add_option("--out", gen_out, "Output directory")->required();

    auto* tr = app.add_subcommand("train", "Train one ablation setup");
    std::string model_cfg, train_cfg, ablation, source, target, val, train_out, resume;
    std::int64_t stop_after = -1;
    bool deterministic = false, verify = false;
    tr->add_option("--model-cfg", model_cfg, "Model config file")->check(CLI::ExistingFile);
    tr->add_option("--train-cfg", train_cfg, "Train config file")->check(CLI::ExistingFile);
    tr->add_option("--ablation", ablation, "S1..S7")->required();
    tr->add_option("--source", source, "Source dataset directory")->required();
    tr->add_option("--target", target, "Target dataset directory (images only are read)")->required();
    tr->add_option("--val", val, "Labelled target validation directory for snapshots");
    tr->add_option("--out", train_out, "Output directory")->required();
    tr->add_option("--resume", resume, "Continue from a state.ckpt")->check(CLI::ExistingFile);
    tr->add_option("--stop-after", stop_after, "Stop after this many iterations");
    tr->add_flag("--deterministic", deterministic, "Single-threaded, bitwise reproducible");
    tr->add_flag("--verify-isolation", verify, "Hash parameters around every sub-update");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a labelled dataset");
    std::string checkpoint, data, baseline, subset, eval_out;
    ev->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
    ev->add_option("--data", data, "Dataset directory")->required();
    ev->add_option("--baseline-report", baseline, "Source-only report.json for the negative transfer rate")
        ->check(CLI::ExistingFile);
    ev->add_option("--subset", subset, "Comma-separated class indices for miou_subset");
    ev->add_option("--out", eval_out, "report.json path")->required();

    auto* ab = app.add_subcommand("ablate", "Run setups x seeds and emit the ablation tables");
    std::string ab_model, ab_train, setups, ab_source, ab_target, ab_val, ab_out, fractions, fraction_setup, ab_subset;
    std::size_t seeds_k = 1;
    std::vector<std::uint64_t> seed_list;
    int jobs = 1;
    bool ab_det = false, ab_verify = false;
    ab->add_option("--model-cfg", ab_model, "Model config file")->check(CLI::ExistingFile);
    ab->add_option("--train-cfg", ab_train, "Train config file")->check(CLI::ExistingFile);
    ab->add_option("--seeds", seeds_k, "Run seeds 0..k-1")->check(CLI::PositiveNumber);
    ab->add_option("--seed-list", seed_list, "Explicit seeds (overrides --seeds)");
    ab->add_option("--setups", setups, "Comma-separated subset of S1..S7");
    ab->add_option("--source", ab_source, "Source dataset directory")->required();
    ab->add_option("--target", ab_target, "Target training directory")->required();
    ab->add_option("--val", ab_val, "Target validation directory")->required();
    ab->add_option("--out", ab_out, "Output directory")->required();
    ab->add_option("--fractions", fractions, "Source fraction sweep, e.g. 0.1,0.3,0.5,0.7,1");
    ab->add_option("--fraction-setup", fraction_setup, "Setup trained in the sweep (default S7)");
    ab->add_option("--subset", ab_subset, "Comma-separated class indices for miou_subset");
    ab->add_option("--jobs", jobs, "Cells trained concurrently")->check(CLI::PositiveNumber);
    ab->add_flag("--deterministic", ab_det, "Single-threaded, bitwise reproducible");
    ab->add_flag("--verify-isolation", ab_verify, "Hash parameters around every sub-update");

    auto* rep = app.add_subcommand("report", "Re-aggregate an ablate output directory");
    std::string rep_dir;
    rep->add_option("--dir", rep_dir, "ablate output directory")->required()->check(CLI::ExistingDirectory);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return DADA_ERR_CONFIG;
    }
    if (!quiet) dada_set_log_callback(log_to_stderr, nullptr);

    if (*gen) return finish(dada_generate_dataset(opt(spec), domain.c_str(), gen_seed, count, gen_out.c_str()), "gen-data");

    if (*tr) {
        dada_train_options o;
        dada_train_options_init(&o);
        o.model_cfg = opt(model_cfg);
        o.train_cfg = opt(train_cfg);
        o.ablation = ablation.c_str();
        o.source_dir = source.c_str();
        o.target_dir = target.c_str();
        o.val_dir = opt(val);
        o.out_dir = train_out.c_str();
        o.resume_from = opt(resume);
        o.stop_after = stop_after;
        o.deterministic = deterministic;
        o.verify_isolation = verify;
        return finish(dada_train(&o), "train");
    }

    if (*ev)
        return finish(dada_evaluate(checkpoint.c_str(), data.c_str(), opt(baseline), opt(subset), eval_out.c_str()),
                      "eval");

    if (*ab) {
        dada_ablate_options o;
        dada_ablate_options_init(&o);
        o.model_cfg = opt(ab_model);
        o.train_cfg = opt(ab_train);
        o.setups = opt(setups);
        if (!seed_list.empty()) {
            o.seeds = seed_list.data();
            o.num_seeds = seed_list.size();
        } else {
            o.num_seeds = seeds_k;
        }
        o.source_dir = ab_source.c_str();
        o.target_dir = ab_target.c_str();
        o.val_dir = ab_val.c_str();
        o.out_dir = ab_out.c_str();
        o.fractions = opt(fractions);
        o.fraction_setup = opt(fraction_setup);
        o.subset = opt(ab_subset);
        o.jobs = jobs;
        o.deterministic = ab_det;
        o.verify_isolation = ab_verify;
        return finish(dada_ablate(&o), "ablate");
    }

    if (*rep) return finish(dada_report(rep_dir.c_str()), "report");
    return 0;
}
