#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dada/model.hpp"
#include "dada/synthdata.hpp"

namespace dada::train {

enum class LrSchedule { Constant, Poly };

struct TrainConfig {
    double lambda_dep = 1e-3;
    double lambda_adv = 1e-3;
    double gen_lr = 2.5e-4;
    double gen_momentum = 0.9;
    double gen_weight_decay = 1e-4;
    double disc_lr = 1e-4;
    double disc_beta1 = 0.9;
    double disc_beta2 = 0.999;
    std::int64_t iterations = 2000;
    std::uint64_t seed = 0;
    LrSchedule lr_schedule = LrSchedule::Constant;
    std::int64_t eval_every = 0;  // 0: evaluate only at the end
    double berhu_fraction = 0.2;
    double source_fraction = 1.0;
    bool disc_first = true;  // discriminator update precedes the generator update within a step

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Switch matrix of the seven ablation setups.
struct AblationSetup {
    std::string name = "custom";
    bool surp_adapt = false;
    bool depth_adapt = false;
    bool feat_fusion = false;
    bool dada_fusion = false;

    static AblationSetup preset(int index);  // 1..7
    static AblationSetup parse(const std::string& name);
    static std::vector<AblationSetup> all_presets();

    void validate() const;
    /// Depth branch present and supervised (every setup that uses depth anywhere).
    bool depth_supervised() const { return feat_fusion || depth_adapt; }
    bool adapts() const { return surp_adapt || depth_adapt; }
    /// Discriminator on C-channel surprisal (or depth-aware surprisal) maps.
    bool uses_main_discriminator() const { return surp_adapt; }
    /// Separate 1-channel discriminator on predicted inverse depth.
    bool uses_depth_discriminator() const { return depth_adapt && !dada_fusion; }
    model::ForwardOptions forward_options() const;
};

struct LossValues {
    double seg_loss = 0;
    double depth_loss = 0;
    double source_objective = 0;
    double d_loss = 0;
    double adv_loss = 0;
};

nlohmann::json to_json(const LossValues& l);

template <typename T>
struct SgdState {
    std::vector<Tensor<T>> velocity;
};

template <typename T>
struct AdamState {
    std::vector<Tensor<T>> m, v;
    std::int64_t step = 0;
};

template <typename T>
struct TrainState {
    TrainConfig config;
    AblationSetup setup;
    model::ModelParams<T> model;
    std::optional<model::DiscriminatorParams<T>> disc_main;
    std::optional<model::DiscriminatorParams<T>> disc_depth;
    SgdState<T> gen_opt;
    AdamState<T> main_opt;
    AdamState<T> depth_opt;
    std::int64_t iteration = 0;
    LossValues running_sum;
    std::int64_t running_count = 0;
};

template <typename T>
TrainState<T> init_train_state(const model::ModelConfig& model_cfg, const TrainConfig& cfg, const AblationSetup& setup);

struct SourceSample {
    std::span<const float> image;
    std::span<const std::uint8_t> labels;
    std::span<const float> inv_depth;
};

/// Hashes taken around each sub-update when verification is requested.
struct IsolationCheck {
    bool generator_untouched_by_disc_update = true;
    bool generator_grads_empty_after_disc_backward = true;
    bool discriminators_untouched_by_gen_update = true;
};

struct StepOptions {
    bool verify_isolation = false;
    IsolationCheck* isolation = nullptr;  // filled when verify_isolation is set
};

/// One alternating iteration on a (source, target) pair. Target annotations
/// are not an input.
template <typename T>
LossValues train_step(TrainState<T>& state, const SourceSample& source, std::span<const float> target_image,
                      const StepOptions& opts = {});

double learning_rate(double base, LrSchedule schedule, std::int64_t iteration, std::int64_t total);

template <typename T>
void save_state(const std::filesystem::path& path, const TrainState<T>& state);
template <typename T>
TrainState<T> load_state(const std::filesystem::path& path);

struct RunOptions {
    std::filesystem::path source_dir;
    std::filesystem::path target_dir;
    std::optional<std::filesystem::path> val_dir;
    std::filesystem::path out_dir;
    bool deterministic = true;
    bool verify_isolation = false;
    std::optional<std::filesystem::path> resume_from;
    /// Stop after this many iterations in this invocation (for resume tests).
    std::optional<std::int64_t> stop_after;
    std::vector<int> subset_classes;
};

struct RunResult {
    model::ModelParams<float> model;
    std::vector<nlohmann::json> metrics;
    std::set<std::size_t> source_indices_touched;
    synth::AccessCounters target_counters;
    std::size_t isolation_failures = 0;
    LossValues last_losses;
};

/// Seeded epochs over the (prefix-limited) source set and the target set.
/// Writes metrics.jsonl, final.ckpt and state.ckpt into out_dir.
RunResult run_training(const model::ModelConfig& model_cfg, const TrainConfig& cfg, const AblationSetup& setup,
                       const RunOptions& opts);

/// Permutation of [0, n) for one epoch; a pure function of (seed, stream, epoch).
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::uint64_t stream, std::int64_t epoch, std::size_t n);

}  // namespace dada::train
