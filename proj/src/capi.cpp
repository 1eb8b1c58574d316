#include "dada.h"

#include <cstdlib>
#include <cstring>
#include <mutex>
#include <string>

#include "dada/config.hpp"
#include "dada/error.hpp"
#include "dada/image_io.hpp"
#include "dada/metrics.hpp"
#include "dada/suite.hpp"
#include "dada/synthdata.hpp"
#include "dada/trainer.hpp"

struct dada_model {
    dada::model::ModelParams<float> params;
};

namespace {

namespace fs = std::filesystem;

thread_local std::string g_last_error;

std::mutex g_log_mu;
dada_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;

void emit_log(const std::string& msg) {
    std::lock_guard lock(g_log_mu);
    if (g_log_fn) g_log_fn(msg.c_str(), g_log_user);
}

bool env_deterministic() {
    const char* v = std::getenv("DADA_DETERMINISTIC");
    return v && std::strcmp(v, "1") == 0;
}

template <typename F>
dada_status guarded(F&& f) {
    try {
        g_last_error.clear();
        f();
        return DADA_OK;
    } catch (const dada::ConfigError& e) {
        g_last_error = e.what();
        return DADA_ERR_CONFIG;
    } catch (const dada::DataError& e) {
        g_last_error = e.what();
        return DADA_ERR_DATA;
    } catch (const dada::NumericError& e) {
        g_last_error = e.what();
        return DADA_ERR_NUMERIC;
    } catch (const dada::ShapeError& e) {
        g_last_error = e.what();
        return DADA_ERR_DATA;
    } catch (const std::out_of_range& e) {
        g_last_error = e.what();
        return DADA_ERR_DATA;
    } catch (const std::invalid_argument& e) {
        g_last_error = e.what();
        return DADA_ERR_INVALID_ARGUMENT;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return DADA_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return DADA_ERR_INTERNAL;
    }
}

std::string required(const char* s, const char* what) {
    if (!s || !*s) throw std::invalid_argument(std::string(what) + " is required");
    return s;
}

dada::model::ModelConfig model_config(const char* path) {
    return path && *path ? dada::config::load_model_config(path) : dada::model::ModelConfig{};
}

dada::train::TrainConfig train_config(const char* path) {
    return path && *path ? dada::config::load_train_config(path) : dada::train::TrainConfig{};
}

std::vector<int> parse_subset(const char* s) {
    std::vector<int> out;
    if (!s) return out;
    for (const auto& item : dada::config::parse_list(s)) {
        try {
            std::size_t pos = 0;
            const int v = std::stoi(item, &pos);
            if (pos != item.size()) throw std::invalid_argument(item);
            out.push_back(v);
        } catch (const std::logic_error&) {
            throw dada::ConfigError("class subset: '" + item + "' is not an integer");
        }
    }
    return out;
}

std::vector<double> parse_fractions(const char* s) {
    std::vector<double> out;
    if (!s) return out;
    for (const auto& item : dada::config::parse_list(s)) {
        char* end = nullptr;
        const double v = std::strtod(item.c_str(), &end);
        if (end != item.c_str() + item.size() || !(v > 0 && v <= 1))
            throw dada::ConfigError("fraction '" + item + "' must be a number in (0, 1]");
        out.push_back(v);
    }
    return out;
}

}  // namespace

extern "C" {

const char* dada_last_error(void) { return g_last_error.c_str(); }

const char* dada_version(void) { return DADA_VERSION; }

void dada_set_log_callback(dada_log_fn fn, void* user) {
    std::lock_guard lock(g_log_mu);
    g_log_fn = fn;
    g_log_user = user;
}

dada_status dada_generate_dataset(const char* spec_path, const char* domain, uint64_t seed, uint64_t count,
                                  const char* out_dir) {
    if (count < 1) {
        g_last_error = "count must be >= 1";
        return DADA_ERR_CONFIG;
    }
    return guarded([&] {
        const auto spec = spec_path && *spec_path ? dada::synth::load_spec_file(spec_path) : dada::synth::SceneSpec{};
        spec.validate();
        const auto d = dada::synth::parse_domain(required(domain, "domain"));
        const auto style = dada::synth::DomainStyle::preset(d, spec);
        dada::synth::generate_dataset(spec, style, seed, count, required(out_dir, "out_dir"));
    });
}

void dada_train_options_init(dada_train_options* opts) {
    if (!opts) return;
    *opts = dada_train_options{};
    opts->stop_after = -1;
}

dada_status dada_train(const dada_train_options* opts) {
    if (!opts) {
        g_last_error = "options are required";
        return DADA_ERR_INVALID_ARGUMENT;
    }
    return guarded([&] {
        const auto mc = model_config(opts->model_cfg);
        const auto tc = train_config(opts->train_cfg);
        const auto setup = dada::train::AblationSetup::parse(required(opts->ablation, "ablation"));
        dada::train::RunOptions ro;
        ro.source_dir = required(opts->source_dir, "source_dir");
        ro.target_dir = required(opts->target_dir, "target_dir");
        if (opts->val_dir && *opts->val_dir) ro.val_dir = fs::path(opts->val_dir);
        ro.out_dir = required(opts->out_dir, "out_dir");
        if (opts->resume_from && *opts->resume_from) ro.resume_from = fs::path(opts->resume_from);
        if (opts->stop_after >= 0) ro.stop_after = opts->stop_after;
        ro.deterministic = opts->deterministic || env_deterministic();
        ro.verify_isolation = opts->verify_isolation != 0;

        dada::config::ExperimentManifest m;
        m.command = "train";
        m.arguments = {"--ablation", setup.name};
        m.resolved_config = {{"model", dada::model::to_json(mc)},
                             {"train", dada::train::to_json(tc)},
                             {"deterministic", ro.deterministic}};
        m.config_hashes = {{"model", dada::config::content_hash(dada::config::emit_model_config(mc))},
                           {"train", dada::config::content_hash(dada::config::emit_train_config(tc))}};
        m.datasets = {dada::config::describe_dataset(ro.source_dir), dada::config::describe_dataset(ro.target_dir)};
        if (ro.val_dir) m.datasets.push_back(dada::config::describe_dataset(*ro.val_dir));
        m.seeds = {tc.seed};
        m.artifact_version = DADA_VERSION;
        m.started_at = dada::config::utc_timestamp();
        emit_log("train " + setup.name + " for " + std::to_string(tc.iterations) + " iterations");
        const auto r = dada::train::run_training(mc, tc, setup, ro);
        m.finished_at = dada::config::utc_timestamp();
        dada::config::write_manifest(ro.out_dir, m);
        if (ro.verify_isolation && r.isolation_failures)
            throw dada::NumericError("gradient isolation violated in " + std::to_string(r.isolation_failures) +
                                     " steps");
    });
}

dada_status dada_evaluate(const char* checkpoint, const char* data_dir, const char* baseline_report,
                          const char* subset, const char* out_path) {
    return guarded([&] {
        const auto ckpt = required(checkpoint, "checkpoint");
        const auto params = dada::model::load_model<float>(ckpt);
        const auto data = dada::synth::Dataset::open(required(data_dir, "data_dir"));
        std::optional<std::vector<double>> baseline;
        if (baseline_report && *baseline_report) {
            const auto bytes = dada::io::read_file(baseline_report);
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(bytes.begin(), bytes.end());
                baseline = dada::metrics::report_from_json(j).per_image_miou;
            } catch (const nlohmann::json::exception& e) {
                throw dada::DataError(std::string("malformed baseline report ") + baseline_report + ": " + e.what());
            }
            if (baseline->size() != data.size())
                throw dada::DataError("baseline report has " + std::to_string(baseline->size()) +
                                      " per-image scores, dataset has " + std::to_string(data.size()));
        }
        auto report = dada::metrics::evaluate_model(params, data, baseline, parse_subset(subset));
        report.meta["checkpoint"] = ckpt;
        const auto text = dada::metrics::to_json(report).dump(2) + "\n";
        dada::io::write_file(required(out_path, "out_path"),
                             std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()),
                                                           text.size()));
    });
}

void dada_ablate_options_init(dada_ablate_options* opts) {
    if (!opts) return;
    *opts = dada_ablate_options{};
    opts->num_seeds = 1;
    opts->jobs = 1;
}

dada_status dada_ablate(const dada_ablate_options* opts) {
    if (!opts) {
        g_last_error = "options are required";
        return DADA_ERR_INVALID_ARGUMENT;
    }
    return guarded([&] {
        dada::suite::SuiteOptions so;
        so.model_cfg = model_config(opts->model_cfg);
        so.train_cfg = train_config(opts->train_cfg);
        if (opts->setups && *opts->setups) {
            so.setups.clear();
            for (const auto& name : dada::config::parse_list(opts->setups))
                so.setups.push_back(dada::train::AblationSetup::parse(name));
        }
        so.seeds.clear();
        for (std::size_t i = 0; i < opts->num_seeds; ++i) so.seeds.push_back(opts->seeds ? opts->seeds[i] : i);
        so.source_dir = required(opts->source_dir, "source_dir");
        so.target_dir = required(opts->target_dir, "target_dir");
        so.val_dir = required(opts->val_dir, "val_dir");
        so.out_dir = required(opts->out_dir, "out_dir");
        so.fractions = parse_fractions(opts->fractions);
        if (opts->fraction_setup && *opts->fraction_setup)
            so.fraction_setup = dada::train::AblationSetup::parse(opts->fraction_setup).name;
        so.subset_classes = parse_subset(opts->subset);
        so.jobs = opts->jobs;
        so.deterministic = opts->deterministic || env_deterministic();
        so.verify_isolation = opts->verify_isolation != 0;
        so.log = emit_log;
        dada::suite::run_ablation_suite(so);
    });
}

dada_status dada_report(const char* dir) {
    return guarded([&] { dada::suite::aggregate(required(dir, "dir")); });
}

dada_status dada_model_load(const char* checkpoint, dada_model** out) {
    if (!out) {
        g_last_error = "out is required";
        return DADA_ERR_INVALID_ARGUMENT;
    }
    *out = nullptr;
    return guarded([&] {
        auto m = std::make_unique<dada_model>();
        m->params = dada::model::load_model<float>(required(checkpoint, "checkpoint"));
        *out = m.release();
    });
}

void dada_model_free(dada_model* model) { delete model; }

dada_status dada_model_info(const dada_model* model, int* num_classes, int* height, int* width) {
    if (!model) {
        g_last_error = "model is NULL";
        return DADA_ERR_INVALID_ARGUMENT;
    }
    if (num_classes) *num_classes = model->params.config.num_classes;
    if (height) *height = model->params.config.input_height;
    if (width) *width = model->params.config.input_width;
    return DADA_OK;
}

dada_status dada_model_predict(const dada_model* model, const float* image, size_t image_len, uint8_t* labels,
                               float* probs) {
    if (!model || !image || !labels) {
        g_last_error = "model, image and labels are required";
        return DADA_ERR_INVALID_ARGUMENT;
    }
    return guarded([&] {
        const auto& cfg = model->params.config;
        const auto expected = static_cast<std::size_t>(cfg.input_height) * cfg.input_width * 3;
        if (image_len != expected)
            throw dada::ShapeError("image has " + std::to_string(image_len) + " values, expected " +
                                   std::to_string(expected));
        const auto x = dada::model::image_to_chw<float>(std::span<const float>(image, image_len), cfg.input_height,
                                                        cfg.input_width);
        auto opts = model->params.arch;
        opts.depth_branch = false;
        const auto out = dada::model::forward(model->params, x, opts);
        const auto pred = dada::metrics::argmax_labels(out.seg.value());
        std::memcpy(labels, pred.data(), pred.size());
        if (probs) std::memcpy(probs, out.seg.value().data(), out.seg.value().size() * sizeof(float));
    });
}

}  // extern "C"
