#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dada/autodiff.hpp"
#include "dada/tensor.hpp"

namespace dada::model {

struct ModelConfig {
    std::vector<int> backbone_channels{16, 32, 64, 64};
    int classifier_dilation = 2;
    int num_classes = 7;
    int input_height = 64;
    int input_width = 64;

    int backbone_depth() const { return static_cast<int>(backbone_channels.size()); }
    int feature_channels() const { return backbone_channels.back(); }
    /// Stages 0..2 downsample by 2, later stages keep resolution.
    int stage_stride(int stage) const { return stage < 3 ? 2 : 1; }
    int output_stride() const;
    /// Depth encoder widths: B, B/4, B/16, B/64.
    std::vector<int> depth_encoder_widths() const;

    /// Throws ConfigError.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Named learnable tensors in a fixed order. Each tensor is a leaf Var that
/// accumulates gradients. Copies are deep (fresh leaves, no gradients).
template <typename T>
class ParamSet {
public:
    ParamSet() = default;
    ParamSet(const ParamSet& other);
    ParamSet& operator=(const ParamSet& other);
    ParamSet(ParamSet&&) noexcept = default;
    ParamSet& operator=(ParamSet&&) noexcept = default;

    void add(std::string name, Tensor<T> value);
    ad::Var<T>& operator[](const std::string& name);
    const ad::Var<T>& operator[](const std::string& name) const;
    bool contains(const std::string& name) const;

    std::vector<std::pair<std::string, ad::Var<T>>>& entries() { return entries_; }
    const std::vector<std::pair<std::string, ad::Var<T>>>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    void zero_grad();
    void set_requires_grad(bool on);
    /// Deep copy (new leaf nodes, no gradients).
    ParamSet clone() const;
    /// FNV-1a over names, shapes and raw value bytes.
    std::uint64_t hash() const;
    std::uint64_t grad_hash() const;
    bool all_finite() const;

private:
    std::vector<std::pair<std::string, ad::Var<T>>> entries_;
};

/// Parameter groups of the segmentation network.
enum class Group { Backbone, DepthEncoder, DepthHead, DepthDecoder, Classifier };
Group group_of(const std::string& param_name);
std::string to_string(Group g);

struct ForwardOptions {
    bool depth_branch = true;    // compute Z
    bool feature_fusion = true;  // multiply backbone features by decoded depth features
    bool force_unit_fusion = false;  // test hook: F_dep := 1

    bool operator==(const ForwardOptions&) const = default;
};

template <typename T>
struct ModelParams {
    ModelConfig config;
    ParamSet<T> params;
    /// Which branches the network was trained with; saved in checkpoints.
    ForwardOptions arch;
};

template <typename T>
ModelParams<T> init_model(const ModelConfig& config, std::uint64_t seed);

template <typename T>
struct ForwardOutputs {
    ad::Var<T> seg;    // [C,H,W] soft segmentation at input resolution
    ad::Var<T> depth;  // [1,H,W] inverse depth at input resolution (undefined without the depth branch)
    ad::Var<T> backbone_features;
    ad::Var<T> depth_features;  // F_dep (undefined without fusion)
    ad::Var<T> fused_features;
    ad::Var<T> logits;  // classifier scores at feature resolution
};

/// Interleaved H*W*3 image to a [3,H,W] tensor.
template <typename T>
Tensor<T> image_to_chw(std::span<const float> hwc, int height, int width);

template <typename T>
ForwardOutputs<T> forward(const ModelParams<T>& params, const ad::Var<T>& image_chw, const ForwardOptions& opts);
template <typename T>
ForwardOutputs<T> forward(const ModelParams<T>& params, const Tensor<T>& image_chw, const ForwardOptions& opts) {
    return forward(params, ad::Var<T>(image_chw), opts);
}
template <typename T>
ForwardOutputs<T> forward(const ModelParams<T>& params, const Tensor<T>& image_chw) {
    return forward(params, image_chw, params.arch);
}

/// DCGAN-style domain classifier: four 4x4 stride-2 convolutions, widths
/// 64-128-256-1, leaky ReLU 0.2 between them. Returns raw scores.
struct DiscriminatorConfig {
    int in_channels = 7;
    std::vector<int> widths{64, 128, 256};
    double leaky_slope = 0.2;

    bool operator==(const DiscriminatorConfig&) const = default;
};

nlohmann::json to_json(const DiscriminatorConfig& c);
DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j);

template <typename T>
struct DiscriminatorParams {
    DiscriminatorConfig config;
    ParamSet<T> params;
};

template <typename T>
DiscriminatorParams<T> init_discriminator(const DiscriminatorConfig& config, std::uint64_t seed);

template <typename T>
ad::Var<T> discriminator_forward(const DiscriminatorParams<T>& d, const ad::Var<T>& input);

// Checkpoint container: "DADACKPT", u32 version, u32 header length, JSON
// header (config, tensor table with names, shapes, dtype, offsets), then
// little-endian raw blobs.
struct TensorRecord {
    std::string name;
    std::vector<std::int64_t> shape;
    std::vector<double> values;
};

void write_container(const std::filesystem::path& path, const nlohmann::json& header,
                     const std::vector<TensorRecord>& tensors, bool single_precision);
std::vector<TensorRecord> read_container(const std::filesystem::path& path, nlohmann::json& header);

template <typename T>
std::vector<TensorRecord> to_records(const ParamSet<T>& set, const std::string& prefix = "");
/// Copies records named prefix+name into set; every shape must match.
template <typename T>
void assign_records(ParamSet<T>& set, const std::vector<TensorRecord>& records, const std::string& prefix = "");

template <typename T>
void save_model(const std::filesystem::path& path, const ModelParams<T>& params);
/// Validates every tensor shape against the stored config before accepting.
template <typename T>
ModelParams<T> load_model(const std::filesystem::path& path);

}  // namespace dada::model
