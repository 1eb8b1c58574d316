#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dada/metrics.hpp"
#include "dada/model.hpp"
#include "dada/trainer.hpp"

namespace dada::suite {

/// Source fractions of the sweep, as in the percentage columns of the paper.
inline const std::vector<double> kDefaultFractions{0.1, 0.3, 0.5, 0.7, 1.0};

struct SuiteOptions {
    model::ModelConfig model_cfg;
    train::TrainConfig train_cfg;
    std::vector<train::AblationSetup> setups = train::AblationSetup::all_presets();
    std::vector<std::uint64_t> seeds{0};
    std::filesystem::path source_dir, target_dir, val_dir, out_dir;
    std::vector<double> fractions;  // empty: no sweep
    std::string fraction_setup = "S7";
    bool deterministic = true;
    bool verify_isolation = false;
    std::vector<int> subset_classes;
    int jobs = 1;  // cells trained concurrently
    std::function<void(const std::string&)> log;
};

/// One training + evaluation cell.
struct Cell {
    std::string setup;
    std::uint64_t seed = 0;
    double fraction = 1.0;
    bool sweep = false;  // part of the fraction sweep rather than the ablation grid

    std::string id() const;
    std::filesystem::path dir(const std::filesystem::path& out_dir) const;
};

struct CellOutcome {
    Cell cell;
    bool ok = false;
    std::string error;
    int exit_code = 0;
    std::optional<metrics::EvalReport> report;
    std::size_t source_indices_touched = 0;
    std::size_t target_annotation_reads = 0;
    std::size_t isolation_failures = 0;
    double seconds = 0;
};

/// Row statistics over seeds.
struct Spread {
    std::size_t n = 0;
    double mean = 0, median = 0, min = 0, max = 0;
};

Spread spread(std::vector<double> values);

struct SuiteResult {
    std::vector<CellOutcome> cells;
    nlohmann::json summary;
};

/// Trains and evaluates every (setup, seed) cell and the optional fraction
/// sweep, then aggregates. Cell failures are recorded and skipped.
SuiteResult run_ablation_suite(const SuiteOptions& opts);

/// Rebuilds tables, plots and summary.json from the cell files in out_dir.
SuiteResult aggregate(const std::filesystem::path& out_dir);

/// Maps an exception from a cell to the CLI exit code convention.
int exit_code_for(const std::exception& e);

}  // namespace dada::suite
