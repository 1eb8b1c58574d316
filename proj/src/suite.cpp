#include "dada/suite.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "dada/config.hpp"
#include "dada/error.hpp"
#include "dada/image_io.hpp"
#include "dada/kvfile.hpp"
#include "dada/plot.hpp"

namespace dada::suite {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    io::write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

json read_json(const fs::path& path) {
    const auto bytes = io::read_file(path);
    try {
        return json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
        throw DataError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

json cell_json(const Cell& c) {
    return {{"setup", c.setup}, {"seed", c.seed}, {"fraction", c.fraction}, {"sweep", c.sweep}};
}

Cell cell_from_json(const json& j) {
    Cell c;
    c.setup = j.at("setup").get<std::string>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.fraction = j.at("fraction").get<double>();
    c.sweep = j.at("sweep").get<bool>();
    return c;
}

json status_json(const CellOutcome& o) {
    return {{"status", o.ok ? "ok" : "failed"},
            {"error", o.error},
            {"exit_code", o.exit_code},
            {"seconds", o.seconds},
            {"source_indices_touched", o.source_indices_touched},
            {"target_annotation_reads", o.target_annotation_reads},
            {"isolation_failures", o.isolation_failures}};
}

json spread_json(const Spread& s) {
    return {{"n", s.n}, {"mean", s.mean}, {"median", s.median}, {"min", s.min}, {"max", s.max}};
}

std::string fmt(double v) { return config::format_double(v); }

int setup_index(const std::string& name) {
    return name.size() == 2 && name[0] == 'S' ? name[1] - '0' : 99;
}

}  // namespace

std::string Cell::id() const {
    if (!sweep) return setup + "_seed" + std::to_string(seed);
    return setup + "_f" + config::format_double(fraction) + "_seed" + std::to_string(seed);
}

fs::path Cell::dir(const fs::path& out_dir) const { return out_dir / "cells" / id(); }

Spread spread(std::vector<double> values) {
    Spread s;
    s.n = values.size();
    if (values.empty()) return s;
    std::sort(values.begin(), values.end());
    double sum = 0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(s.n);
    s.median = s.n % 2 ? values[s.n / 2] : 0.5 * (values[s.n / 2 - 1] + values[s.n / 2]);
    s.min = values.front();
    s.max = values.back();
    return s;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const DataError*>(&e)) return 3;
    if (dynamic_cast<const NumericError*>(&e)) return 4;
    return 1;
}

SuiteResult run_ablation_suite(const SuiteOptions& opts) {
    if (opts.seeds.empty()) throw ConfigError("ablate: at least one seed is required");
    if (opts.setups.empty()) throw ConfigError("ablate: no setups requested");
    if (opts.jobs < 1) throw ConfigError("ablate: jobs must be >= 1");
    opts.model_cfg.validate();
    opts.train_cfg.validate();
    for (double f : opts.fractions)
        if (!(f > 0 && f <= 1)) throw ConfigError("ablate: fraction " + fmt(f) + " outside (0, 1]");
    std::error_code ec;
    fs::create_directories(opts.out_dir / "cells", ec);
    if (ec) throw DataError("cannot create " + (opts.out_dir / "cells").string() + ": " + ec.message());

    auto setups = opts.setups;
    std::stable_sort(setups.begin(), setups.end(),
                     [](const auto& a, const auto& b) { return setup_index(a.name) < setup_index(b.name); });

    std::vector<Cell> cells;
    for (auto seed : opts.seeds)
        for (const auto& s : setups) cells.push_back({s.name, seed, opts.train_cfg.source_fraction, false});
    const bool fraction_in_grid =
        std::any_of(setups.begin(), setups.end(), [&](const auto& s) { return s.name == opts.fraction_setup; });
    for (double f : opts.fractions)
        for (auto seed : opts.seeds) {
            if (fraction_in_grid && f == opts.train_cfg.source_fraction) continue;  // same run as the grid cell
            cells.push_back({opts.fraction_setup, seed, f, true});
        }

    const auto started = config::utc_timestamp();
    json suite{{"setups", json::array()},
               {"seeds", opts.seeds},
               {"fractions", opts.fractions},
               {"fraction_setup", opts.fraction_setup},
               {"grid_fraction", opts.train_cfg.source_fraction},
               {"class_names", json::array()}};
    for (const auto& s : setups) suite["setups"].push_back(s.name);
    write_text(opts.out_dir / "suite.json", suite.dump(2) + "\n");

    std::mutex log_mu;
    auto log = [&](const std::string& msg) {
        if (!opts.log) return;
        std::lock_guard lock(log_mu);
        opts.log(msg);
    };

    std::vector<CellOutcome> outcomes(cells.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            const auto& cell = cells[i];
            auto& out = outcomes[i];
            out.cell = cell;
            const auto dir = cell.dir(opts.out_dir);
            const auto t0 = std::chrono::steady_clock::now();
            try {
                fs::create_directories(dir);
                write_text(dir / "cell.json", cell_json(cell).dump(2) + "\n");
                auto cfg = opts.train_cfg;
                cfg.seed = cell.seed;
                cfg.source_fraction = cell.fraction;
                train::RunOptions ro;
                ro.source_dir = opts.source_dir;
                ro.target_dir = opts.target_dir;
                ro.val_dir = opts.val_dir;
                ro.out_dir = dir;
                ro.deterministic = opts.deterministic;
                ro.verify_isolation = opts.verify_isolation;
                ro.subset_classes = opts.subset_classes;
                log("train " + cell.id());
                config::ExperimentManifest m;
                m.command = "train";
                m.arguments = {"--ablation", cell.setup};
                m.resolved_config = {{"model", model::to_json(opts.model_cfg)}, {"train", train::to_json(cfg)}};
                m.config_hashes = {{"model", config::content_hash(config::emit_model_config(opts.model_cfg))},
                                   {"train", config::content_hash(config::emit_train_config(cfg))}};
                m.seeds = {cell.seed};
                m.artifact_version = DADA_VERSION;
                m.started_at = config::utc_timestamp();
                const auto r = train::run_training(opts.model_cfg, cfg, train::AblationSetup::parse(cell.setup), ro);
                m.finished_at = config::utc_timestamp();
                config::write_manifest(dir, m);
                out.ok = true;
                out.source_indices_touched = r.source_indices_touched.size();
                out.target_annotation_reads = r.target_counters.label_reads + r.target_counters.depth_reads +
                                              r.target_counters.blocked_reads;
                out.isolation_failures = r.isolation_failures;
            } catch (const std::exception& e) {
                out.ok = false;
                out.error = e.what();
                out.exit_code = exit_code_for(e);
                log("cell " + cell.id() + " failed: " + out.error);
            }
            out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
    };
    {
        std::vector<std::thread> pool;
        for (int j = 1; j < std::min<int>(opts.jobs, static_cast<int>(cells.size())); ++j) pool.emplace_back(worker);
        worker();
        for (auto& t : pool) t.join();
    }

    // Evaluation runs after training so every cell can compare against the
    // source-only baseline of its seed.
    const auto val = synth::Dataset::open(opts.val_dir);
    std::map<std::uint64_t, std::vector<double>> baselines;
    auto evaluate = [&](CellOutcome& o) {
        if (!o.ok) return;
        try {
            const auto dir = o.cell.dir(opts.out_dir);
            const auto params = model::load_model<float>(dir / "final.ckpt");
            std::optional<std::vector<double>> baseline;
            if (auto it = baselines.find(o.cell.seed); it != baselines.end()) baseline = it->second;
            auto report = metrics::evaluate_model(params, val, baseline, opts.subset_classes);
            report.meta["checkpoint"] = (dir / "final.ckpt").string();
            report.meta["setup"] = o.cell.setup;
            report.meta["seed"] = o.cell.seed;
            report.meta["source_fraction"] = o.cell.fraction;
            write_text(dir / "report.json", metrics::to_json(report).dump(2) + "\n");
            if (o.cell.setup == "S1" && !o.cell.sweep) baselines[o.cell.seed] = report.per_image_miou;
            o.report = std::move(report);
        } catch (const std::exception& e) {
            o.ok = false;
            o.error = e.what();
            o.exit_code = exit_code_for(e);
        }
    };
    for (auto& o : outcomes)
        if (o.cell.setup == "S1" && !o.cell.sweep) evaluate(o);
    for (auto& o : outcomes)
        if (!(o.cell.setup == "S1" && !o.cell.sweep)) evaluate(o);
    for (const auto& o : outcomes) write_text(o.cell.dir(opts.out_dir) / "status.json", status_json(o).dump(2) + "\n");

    suite["class_names"] = val.spec().class_names;
    write_text(opts.out_dir / "suite.json", suite.dump(2) + "\n");

    config::ExperimentManifest m;
    m.command = "ablate";
    m.resolved_config = {{"model", model::to_json(opts.model_cfg)}, {"train", train::to_json(opts.train_cfg)}, {"suite", suite}};
    m.config_hashes = {{"model", config::content_hash(config::emit_model_config(opts.model_cfg))},
                       {"train", config::content_hash(config::emit_train_config(opts.train_cfg))}};
    m.datasets = {config::describe_dataset(opts.source_dir), config::describe_dataset(opts.target_dir),
                  config::describe_dataset(opts.val_dir)};
    m.seeds = opts.seeds;
    m.artifact_version = DADA_VERSION;
    m.started_at = started;
    m.finished_at = config::utc_timestamp();
    config::write_manifest(opts.out_dir, m);

    return aggregate(opts.out_dir);
}

SuiteResult aggregate(const fs::path& out_dir) {
    const auto suite = read_json(out_dir / "suite.json");
    const auto class_names = suite.at("class_names").get<std::vector<std::string>>();
    const auto setup_order = suite.at("setups").get<std::vector<std::string>>();
    const auto fraction_setup = suite.at("fraction_setup").get<std::string>();
    const auto grid_fraction = suite.at("grid_fraction").get<double>();
    const bool has_sweep = !suite.at("fractions").empty();

    SuiteResult result;
    std::vector<fs::path> dirs;
    if (fs::exists(out_dir / "cells"))
        for (const auto& entry : fs::directory_iterator(out_dir / "cells"))
            if (entry.is_directory()) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) {
        if (!fs::exists(dir / "cell.json")) continue;
        CellOutcome o;
        o.cell = cell_from_json(read_json(dir / "cell.json"));
        if (fs::exists(dir / "status.json")) {
            const auto st = read_json(dir / "status.json");
            o.ok = st.at("status") == "ok";
            o.error = st.value("error", "");
            o.exit_code = st.value("exit_code", 0);
            o.seconds = st.value("seconds", 0.0);
            o.source_indices_touched = st.value("source_indices_touched", std::size_t{0});
            o.target_annotation_reads = st.value("target_annotation_reads", std::size_t{0});
            o.isolation_failures = st.value("isolation_failures", std::size_t{0});
        } else {
            o.error = "incomplete (no status.json)";
        }
        if (o.ok && fs::exists(dir / "report.json")) o.report = metrics::report_from_json(read_json(dir / "report.json"));
        if (!o.report) o.ok = false;
        result.cells.push_back(std::move(o));
    }

    // Ablation table: one row per setup over seeds.
    std::ostringstream table;
    table << "setup,surp_adapt,depth_adapt,feat_fusion,dada_fusion";
    for (const auto& n : class_names) table << ",iou_" << n;
    table << ",miou_mean,miou_median,miou_min,miou_max,runs,failed,ntr_mean,ntr_max\n";
    std::ostringstream runs;
    runs << "setup,seed,source_fraction,status,miou,negative_transfer_rate,source_indices_touched,"
            "target_annotation_reads,isolation_failures\n";

    json rows = json::object();
    std::vector<plot::Bar> bars;
    for (const auto& name : setup_order) {
        std::vector<double> mious, ntrs;
        std::vector<std::vector<double>> per_class(class_names.size());
        std::size_t failed = 0;
        for (const auto& o : result.cells) {
            if (o.cell.sweep || o.cell.setup != name) continue;
            if (!o.ok) {
                ++failed;
                continue;
            }
            mious.push_back(o.report->miou);
            if (o.report->negative_transfer_rate) ntrs.push_back(*o.report->negative_transfer_rate);
            for (std::size_t c = 0; c < class_names.size() && c < o.report->per_class_iou.size(); ++c)
                if (o.report->per_class_iou[c]) per_class[c].push_back(*o.report->per_class_iou[c]);
        }
        const auto setup = train::AblationSetup::parse(name);
        const auto s = spread(mious);
        const auto ntr = spread(ntrs);
        table << name << "," << setup.surp_adapt << "," << setup.depth_adapt << "," << setup.feat_fusion << ","
              << setup.dada_fusion;
        json pc = json::array();
        for (const auto& v : per_class) {
            if (v.empty()) {
                table << ",";
                pc.push_back(nullptr);
            } else {
                table << "," << fmt(spread(v).mean);
                pc.push_back(spread(v).mean);
            }
        }
        table << "," << fmt(s.mean) << "," << fmt(s.median) << "," << fmt(s.min) << "," << fmt(s.max) << "," << s.n
              << "," << failed << ",";
        if (ntr.n) table << fmt(ntr.mean) << "," << fmt(ntr.max);
        else table << ",";
        table << "\n";
        rows[name] = {{"miou", spread_json(s)}, {"per_class_iou_mean", pc}, {"failed", failed}};
        if (ntr.n) rows[name]["negative_transfer_rate"] = spread_json(ntr);
        if (s.n) bars.push_back({name, s.median, s.min, s.max});
    }
    for (const auto& o : result.cells) {
        runs << o.cell.setup << "," << o.cell.seed << "," << fmt(o.cell.fraction) << "," << (o.ok ? "ok" : "failed")
             << ",";
        if (o.ok) {
            runs << fmt(o.report->miou) << ",";
            if (o.report->negative_transfer_rate) runs << fmt(*o.report->negative_transfer_rate);
        } else {
            runs << ",";
        }
        runs << "," << o.source_indices_touched << "," << o.target_annotation_reads << "," << o.isolation_failures
             << "\n";
    }
    write_text(out_dir / "ablation_table.csv", table.str());
    write_text(out_dir / "ablation_runs.csv", runs.str());
    if (!bars.empty()) io::write_png(out_dir / "ablation_miou.png", plot::bar_chart(bars, 1.0));

    json summary{{"setups", rows}};
    auto median_of = [&](const std::string& name) -> std::optional<double> {
        if (!rows.contains(name) || rows[name]["miou"]["n"].get<std::size_t>() == 0) return std::nullopt;
        return rows[name]["miou"]["median"].get<double>();
    };
    json checks = json::object();
    if (const auto s1 = median_of("S1")) {
        if (const auto s2 = median_of("S2")) {
            checks["s2_minus_s1"] = *s2 - *s1;
            checks["s2_beats_s1_by_3_points"] = *s2 - *s1 >= 0.03;
        }
        if (const auto s7 = median_of("S7")) {
            checks["s7_minus_s1"] = *s7 - *s1;
            checks["s7_beats_s1_by_3_points"] = *s7 - *s1 >= 0.03;
        }
        json ranking = json::object();
        for (const auto& name : {"S2", "S3", "S4", "S5", "S6"})
            if (const auto v = median_of(name)) ranking[name] = *v >= *s1;
        checks["s1_le_adapted"] = ranking;
    }
    if (const auto s2 = median_of("S2"))
        if (const auto s7 = median_of("S7")) {
            checks["s7_minus_s2"] = *s7 - *s2;
            checks["s7_ge_s2_minus_1_point"] = *s7 - *s2 >= -0.01;
            checks["s7_gt_s2"] = *s7 > *s2;
        }
    if (rows.contains("S7") && rows["S7"].contains("negative_transfer_rate")) {
        const double ntr = rows["S7"]["negative_transfer_rate"]["median"].get<double>();
        checks["s7_negative_transfer_rate"] = ntr;
        checks["s7_ntr_within_bound"] = ntr <= 0.4 && ntr < 1.0;
    }
    summary["checks"] = checks;

    if (has_sweep) {
        std::map<double, std::vector<double>> by_fraction;
        std::map<double, std::set<std::size_t>> touched;
        for (const auto& o : result.cells) {
            if (!o.ok || o.cell.setup != fraction_setup) continue;
            if (!o.cell.sweep && o.cell.fraction != grid_fraction) continue;
            by_fraction[o.cell.fraction].push_back(o.report->miou);
            touched[o.cell.fraction].insert(o.source_indices_touched);
        }
        std::ostringstream ft;
        ft << "fraction,setup,miou_mean,miou_median,miou_min,miou_max,runs,source_indices_touched\n";
        json fr = json::array();
        std::vector<plot::Bar> fbars;
        std::optional<double> prev;
        bool monotone = true;
        for (const auto& [f, values] : by_fraction) {
            const auto s = spread(values);
            std::string idx;
            for (auto t : touched[f]) idx += (idx.empty() ? "" : ";") + std::to_string(t);
            ft << fmt(f) << "," << fraction_setup << "," << fmt(s.mean) << "," << fmt(s.median) << "," << fmt(s.min)
               << "," << fmt(s.max) << "," << s.n << "," << idx << "\n";
            fr.push_back({{"fraction", f}, {"miou", spread_json(s)}, {"source_indices_touched", idx}});
            if (prev && s.median < *prev) monotone = false;
            prev = s.median;
            fbars.push_back({std::to_string(static_cast<int>(std::lround(f * 100))) + "%", s.median, s.min, s.max});
        }
        write_text(out_dir / "fraction_table.csv", ft.str());
        if (!fbars.empty()) io::write_png(out_dir / "fraction_miou.png", plot::bar_chart(fbars, 1.0));
        summary["fractions"] = fr;
        summary["fraction_monotone"] = monotone;
        if (by_fraction.size() >= 2) {
            const auto lo = spread(by_fraction.begin()->second).median;
            const auto hi = spread(by_fraction.rbegin()->second).median;
            summary["checks"]["full_fraction_ge_smallest"] = hi >= lo;
        }
    }
    std::size_t failed = 0;
    for (const auto& o : result.cells) failed += o.ok ? 0 : 1;
    summary["cells"] = result.cells.size();
    summary["failed_cells"] = failed;
    write_text(out_dir / "summary.json", summary.dump(2) + "\n");
    result.summary = std::move(summary);
    return result;
}

}  // namespace dada::suite
