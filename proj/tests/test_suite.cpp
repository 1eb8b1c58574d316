#include <doctest.h>

#include <fstream>

#include "dada/error.hpp"
#include "dada/image_io.hpp"
#include "dada/suite.hpp"
#include "support.hpp"

namespace suite = dada::suite;
namespace synth = dada::synth;
namespace fs = std::filesystem;

namespace {

nlohmann::json load_json(const fs::path& p) {
    std::ifstream in(p);
    return nlohmann::json::parse(in);
}

std::string read_text(const fs::path& p) {
    const auto b = dada::io::read_file(p);
    return {b.begin(), b.end()};
}

}  // namespace

TEST_SUITE("suite") {

TEST_CASE("spread statistics") {
    const auto s = suite::spread({0.3, 0.1, 0.2, 0.6});
    CHECK(s.n == 4);
    CHECK(s.median == doctest::Approx(0.25));
    CHECK(s.mean == doctest::Approx(0.3));
    CHECK(s.min == 0.1);
    CHECK(s.max == 0.6);
    CHECK(suite::spread({0.5, 0.1, 0.4}).median == 0.4);
    CHECK(suite::spread({}).n == 0);
}

TEST_CASE("cell identifiers") {
    CHECK(suite::Cell{"S7", 2, 1.0, false}.id() == "S7_seed2");
    CHECK(suite::Cell{"S7", 0, 0.1, true}.id() == "S7_f0.1_seed0");
    CHECK(suite::Cell{"S1", 0, 1.0, false}.dir("out") == fs::path("out/cells/S1_seed0"));
}

TEST_CASE("exception classes map to exit codes") {
    CHECK(suite::exit_code_for(dada::ConfigError("x")) == 2);
    CHECK(suite::exit_code_for(dada::DataError("x")) == 3);
    CHECK(suite::exit_code_for(dada::NumericError("x")) == 4);
    CHECK(suite::exit_code_for(std::runtime_error("x")) == 1);
}

TEST_CASE("a small suite writes tables, plots and checks") {
    testing::TempDir dir("suite");
    synth::SceneSpec spec;
    spec.height = spec.width = 32;
    synth::generate_dataset(spec, synth::DomainStyle::preset(synth::Domain::Source, spec), 1, 10, dir / "src");
    synth::generate_dataset(spec, synth::DomainStyle::preset(synth::Domain::Target, spec), 2, 6, dir / "tgt");
    synth::generate_dataset(spec, synth::DomainStyle::preset(synth::Domain::Target, spec), 3, 4, dir / "val");

    suite::SuiteOptions o;
    o.model_cfg.input_height = o.model_cfg.input_width = 32;
    o.train_cfg.iterations = 3;
    o.setups = {dada::train::AblationSetup::preset(7), dada::train::AblationSetup::preset(1),
                dada::train::AblationSetup::preset(2)};
    o.seeds = {0, 1};
    o.fractions = {0.5, 1.0};
    o.source_dir = dir / "src";
    o.target_dir = dir / "tgt";
    o.val_dir = dir / "val";
    o.out_dir = dir / "out";
    o.verify_isolation = true;
    o.jobs = 2;
    const auto r = suite::run_ablation_suite(o);

    CHECK(r.cells.size() == 8);  // 3 setups x 2 seeds + 2 sweep cells at 0.5
    for (const auto& c : r.cells) {
        CAPTURE(c.cell.id());
        CHECK(c.ok);
        CHECK(c.target_annotation_reads == 0);
        CHECK(c.isolation_failures == 0);
    }
    CHECK(fs::exists(dir / "out/cells/S7_f0.5_seed1/report.json"));
    CHECK_FALSE(fs::exists(dir / "out/cells/S7_f1_seed0"));
    for (const char* f : {"ablation_table.csv", "ablation_runs.csv", "ablation_miou.png", "summary.json",
                          "fraction_table.csv", "fraction_miou.png", "experiment.json", "suite.json"})
        CHECK(fs::exists(dir / "out" / f));

    const auto table = read_text(dir / "out/ablation_table.csv");
    CHECK(table.find("\nS1,") < table.find("\nS2,"));
    CHECK(table.find("\nS2,") < table.find("\nS7,"));

    const auto summary = load_json(dir / "out/summary.json");
    CHECK(summary["checks"].contains("s2_minus_s1"));
    CHECK(summary["checks"].contains("s7_ge_s2_minus_1_point"));
    CHECK(summary["checks"].contains("s7_negative_transfer_rate"));
    CHECK(summary["checks"].contains("full_fraction_ge_smallest"));
    CHECK(summary["fractions"].size() == 2);
    CHECK(summary["failed_cells"] == 0);

    // The baseline report of each seed carries no transfer rate; adapted ones do.
    CHECK(load_json(dir / "out/cells/S1_seed0/report.json")["negative_transfer_rate"].is_null());
    CHECK(load_json(dir / "out/cells/S7_seed0/report.json")["negative_transfer_rate"].is_number());

    // Re-aggregation from disk reproduces the same summary.
    const auto again = suite::aggregate(dir / "out");
    CHECK(again.summary == summary);
}

TEST_CASE("invalid suite options are configuration errors") {
    suite::SuiteOptions o;
    o.seeds.clear();
    CHECK_THROWS_AS(suite::run_ablation_suite(o), dada::ConfigError);
    o.seeds = {0};
    o.fractions = {1.5};
    CHECK_THROWS_AS(suite::run_ablation_suite(o), dada::ConfigError);
}

}  // TEST_SUITE
