#include "dada/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <map>

#include "dada/error.hpp"
#include "dada/image_io.hpp"
#include "dada/rng.hpp"

namespace dada::model {

namespace {

constexpr char kMagic[8] = {'D', 'A', 'D', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kContainerVersion = 1;

// softplus(b) = 0.5, so the initial inverse-depth prediction sits mid-range.
const double kDepthBiasInit = std::log(std::exp(0.5) - 1.0);
constexpr double kDecoderWeightGain = 0.1;

template <typename T>
Tensor<T> he_normal(Rng& rng, std::vector<std::int64_t> shape, double gain = std::sqrt(2.0)) {
    Tensor<T> t(std::move(shape));
    const auto fan_in = t.dim(1) * t.dim(2) * t.dim(3);
    const double std = gain / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.storage()) v = static_cast<T>(std * rng.normal());
    return t;
}

template <typename T>
void add_conv(ParamSet<T>& set, Rng& rng, const std::string& name, int cout, int cin, int k, double gain,
              double bias = 0.0) {
    set.add(name + ".weight", he_normal<T>(rng, {cout, cin, k, k}, gain));
    set.add(name + ".bias", Tensor<T>({cout}, static_cast<T>(bias)));
}

template <typename T>
ad::Var<T> conv(const ParamSet<T>& p, const std::string& name, const ad::Var<T>& x, ad::ConvGeometry g) {
    return ad::conv2d(x, p[name + ".weight"], p[name + ".bias"], g);
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

}  // namespace

int ModelConfig::output_stride() const {
    int s = 1;
    for (int i = 0; i < backbone_depth(); ++i) s *= stage_stride(i);
    return s;
}

std::vector<int> ModelConfig::depth_encoder_widths() const {
    const int b = feature_channels();
    return {b, b / 4, b / 16, b / 64};
}

void ModelConfig::validate() const {
    if (backbone_channels.empty()) throw ConfigError("model config: backbone needs at least one stage");
    for (int c : backbone_channels)
        if (c < 1) throw ConfigError("model config: backbone channel counts must be positive");
    if (feature_channels() % 64 != 0)
        throw ConfigError("model config: final backbone channel count " + std::to_string(feature_channels()) +
                          " is not divisible by 64");
    if (classifier_dilation < 1) throw ConfigError("model config: classifier_dilation must be >= 1");
    if (num_classes < 2 || num_classes > 255) throw ConfigError("model config: num_classes must be in [2, 255]");
    if (input_height < output_stride() || input_width < output_stride() || input_height % output_stride() != 0 ||
        input_width % output_stride() != 0)
        throw ConfigError("model config: input size must be a positive multiple of the output stride " +
                          std::to_string(output_stride()));
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"backbone_channels", c.backbone_channels}, {"classifier_dilation", c.classifier_dilation},
            {"num_classes", c.num_classes},             {"input_height", c.input_height},
            {"input_width", c.input_width}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.backbone_channels = j.at("backbone_channels").get<std::vector<int>>();
    c.classifier_dilation = j.at("classifier_dilation").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.input_height = j.at("input_height").get<int>();
    c.input_width = j.at("input_width").get<int>();
    c.validate();
    return c;
}

Group group_of(const std::string& name) {
    if (name.starts_with("backbone.")) return Group::Backbone;
    if (name.starts_with("depth.enc")) return Group::DepthEncoder;
    if (name.starts_with("depth.proj")) return Group::DepthHead;
    if (name.starts_with("depth.dec")) return Group::DepthDecoder;
    if (name.starts_with("classifier.")) return Group::Classifier;
    throw std::invalid_argument("unknown parameter group for " + name);
}

std::string to_string(Group g) {
    switch (g) {
        case Group::Backbone: return "backbone";
        case Group::DepthEncoder: return "depth_encoder";
        case Group::DepthHead: return "depth_head";
        case Group::DepthDecoder: return "depth_decoder";
        case Group::Classifier: return "classifier";
    }
    return "?";
}

template <typename T>
ParamSet<T>::ParamSet(const ParamSet& other) {
    entries_.reserve(other.entries_.size());
    for (const auto& [n, v] : other.entries_) entries_.emplace_back(n, ad::Var<T>(v.value(), v.requires_grad()));
}

template <typename T>
ParamSet<T>& ParamSet<T>::operator=(const ParamSet& other) {
    if (this != &other) {
        ParamSet tmp(other);
        entries_ = std::move(tmp.entries_);
    }
    return *this;
}

template <typename T>
void ParamSet<T>::add(std::string name, Tensor<T> value) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
    entries_.emplace_back(std::move(name), ad::Var<T>(std::move(value), true));
}

template <typename T>
ad::Var<T>& ParamSet<T>::operator[](const std::string& name) {
    for (auto& [n, v] : entries_)
        if (n == name) return v;
    throw std::out_of_range("no parameter named " + name);
}

template <typename T>
const ad::Var<T>& ParamSet<T>::operator[](const std::string& name) const {
    for (const auto& [n, v] : entries_)
        if (n == name) return v;
    throw std::out_of_range("no parameter named " + name);
}

template <typename T>
bool ParamSet<T>::contains(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.first == name) return true;
    return false;
}

template <typename T>
void ParamSet<T>::zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
}

template <typename T>
void ParamSet<T>::set_requires_grad(bool on) {
    for (auto& e : entries_) e.second.set_requires_grad(on);
}

template <typename T>
ParamSet<T> ParamSet<T>::clone() const {
    return ParamSet<T>(*this);
}

template <typename T>
std::uint64_t ParamSet<T>::hash() const {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (const auto& [n, v] : entries_) {
        h = fnv1a(h, n.data(), n.size());
        h = fnv1a(h, v.value().shape().data(), v.value().shape().size() * sizeof(std::int64_t));
        h = fnv1a(h, v.value().data(), v.value().size() * sizeof(T));
    }
    return h;
}

template <typename T>
std::uint64_t ParamSet<T>::grad_hash() const {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (const auto& [n, v] : entries_) {
        h = fnv1a(h, n.data(), n.size());
        if (v.has_grad()) h = fnv1a(h, v.grad().data(), v.grad().size() * sizeof(T));
    }
    return h;
}

template <typename T>
bool ParamSet<T>::all_finite() const {
    for (const auto& e : entries_)
        for (auto v : e.second.value().storage())
            if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

template <typename T>
ModelParams<T> init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(hash_combine(seed, 0x4D4F44454Cull));
    ModelParams<T> m;
    m.config = config;
    auto& p = m.params;
    int cin = 3;
    for (int i = 0; i < config.backbone_depth(); ++i) {
        const int cout = config.backbone_channels[static_cast<std::size_t>(i)];
        add_conv(p, rng, "backbone." + std::to_string(i), cout, cin, 3, std::sqrt(2.0));
        cin = cout;
    }
    const auto w = config.depth_encoder_widths();
    add_conv(p, rng, "depth.enc1", w[1], w[0], 1, std::sqrt(2.0));
    add_conv(p, rng, "depth.enc2", w[2], w[1], 3, std::sqrt(2.0));
    add_conv(p, rng, "depth.enc3", w[3], w[2], 1, 1.0);
    add_conv(p, rng, "depth.proj", 1, w[3], 1, 1.0, kDepthBiasInit);
    add_conv(p, rng, "depth.dec", w[0], w[3], 1, kDecoderWeightGain, 1.0);
    add_conv(p, rng, "classifier", config.num_classes, w[0], 3, 1.0);
    return m;
}

template <typename T>
Tensor<T> image_to_chw(std::span<const float> hwc, int height, int width) {
    if (hwc.size() != static_cast<std::size_t>(height) * width * 3)
        throw ShapeError("image has " + std::to_string(hwc.size()) + " values, expected " + std::to_string(height) + "x" +
                         std::to_string(width) + "x3");
    Tensor<T> t({3, height, width});
    const auto hw = static_cast<std::size_t>(height) * width;
    for (std::size_t i = 0; i < hw; ++i)
        for (std::size_t c = 0; c < 3; ++c) t[c * hw + i] = static_cast<T>(hwc[i * 3 + c]);
    return t;
}

template <typename T>
ForwardOutputs<T> forward(const ModelParams<T>& m, const ad::Var<T>& input, const ForwardOptions& opts) {
    const auto& cfg = m.config;
    const auto& p = m.params;
    const auto& image = input.value();
    if (image.rank() != 3 || image.channels() != 3 || image.height() != cfg.input_height ||
        image.width() != cfg.input_width)
        throw ShapeError("forward: expected input [3, " + std::to_string(cfg.input_height) + ", " +
                         std::to_string(cfg.input_width) + "], got " + image.shape_string());
    ForwardOutputs<T> out;
    ad::Var<T> x = input;
    for (int i = 0; i < cfg.backbone_depth(); ++i)
        x = ad::relu(conv(p, "backbone." + std::to_string(i), x, {cfg.stage_stride(i), 1, 1}));
    out.backbone_features = x;

    ad::Var<T> fused = x;
    if (opts.depth_branch || opts.feature_fusion) {
        auto e = ad::relu(conv(p, "depth.enc1", x, {1, 0, 1}));
        e = ad::relu(conv(p, "depth.enc2", e, {1, 1, 1}));
        e = conv(p, "depth.enc3", e, {1, 0, 1});
        if (opts.depth_branch) {
            auto z = ad::softplus(ad::avg_pool3x3(conv(p, "depth.proj", e, {1, 0, 1})));
            out.depth = ad::upsample_bilinear(z, cfg.input_height, cfg.input_width);
        }
        if (opts.feature_fusion) {
            out.depth_features = opts.force_unit_fusion ? ad::Var<T>(Tensor<T>(x.value().shape(), T(1)))
                                                        : conv(p, "depth.dec", e, {1, 0, 1});
            fused = ad::mul(x, out.depth_features);
        }
    }
    out.fused_features = fused;
    const int d = cfg.classifier_dilation;
    out.logits = conv(p, "classifier", fused, {1, d, d});
    out.seg = ad::upsample_bilinear(ad::softmax_channels(out.logits), cfg.input_height, cfg.input_width);
    return out;
}

nlohmann::json to_json(const DiscriminatorConfig& c) {
    return {{"in_channels", c.in_channels}, {"widths", c.widths}, {"leaky_slope", c.leaky_slope}};
}

DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j) {
    DiscriminatorConfig c;
    c.in_channels = j.at("in_channels").get<int>();
    c.widths = j.at("widths").get<std::vector<int>>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    return c;
}

template <typename T>
DiscriminatorParams<T> init_discriminator(const DiscriminatorConfig& config, std::uint64_t seed) {
    if (config.in_channels < 1) throw ConfigError("discriminator: in_channels must be positive");
    Rng rng(hash_combine(seed, 0x444953432Eull));
    DiscriminatorParams<T> d;
    d.config = config;
    int cin = config.in_channels;
    const double gain = std::sqrt(2.0 / (1.0 + config.leaky_slope * config.leaky_slope));
    for (std::size_t i = 0; i < config.widths.size(); ++i) {
        add_conv(d.params, rng, "disc." + std::to_string(i), config.widths[i], cin, 4, gain);
        cin = config.widths[i];
    }
    add_conv(d.params, rng, "disc." + std::to_string(config.widths.size()), 1, cin, 4, 1.0);
    return d;
}

template <typename T>
ad::Var<T> discriminator_forward(const DiscriminatorParams<T>& d, const ad::Var<T>& input) {
    const auto& v = input.value();
    if (v.rank() != 3 || v.channels() != d.config.in_channels)
        throw ShapeError("discriminator: expected " + std::to_string(d.config.in_channels) + " input channels, got " +
                         v.shape_string());
    const auto n = d.config.widths.size();
    ad::Var<T> x = input;
    for (std::size_t i = 0; i <= n; ++i) {
        x = conv(d.params, "disc." + std::to_string(i), x, {2, 1, 1});
        if (i < n) x = ad::leaky_relu(x, static_cast<T>(d.config.leaky_slope));
    }
    return x;
}

void write_container(const std::filesystem::path& path, const nlohmann::json& header_in,
                     const std::vector<TensorRecord>& tensors, bool single_precision) {
    nlohmann::json header = header_in;
    header["format_version"] = kContainerVersion;
    header["dtype"] = single_precision ? "f32" : "f64";
    nlohmann::json table = nlohmann::json::array();
    std::uint64_t offset = 0;
    const std::uint64_t width = single_precision ? 4 : 8;
    for (const auto& t : tensors) {
        table.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"count", t.values.size()}});
        offset += t.values.size() * width;
    }
    header["tensors"] = table;
    const auto text = header.dump();
    std::vector<std::uint8_t> bytes(kMagic, kMagic + 8);
    io::append_u32(bytes, kContainerVersion);
    io::append_u32(bytes, static_cast<std::uint32_t>(text.size()));
    bytes.insert(bytes.end(), text.begin(), text.end());
    bytes.reserve(bytes.size() + offset);
    for (const auto& t : tensors)
        for (double v : t.values) {
            if (single_precision) {
                io::append_f32(bytes, static_cast<float>(v));
            } else {
                const auto bits = std::bit_cast<std::uint64_t>(v);
                io::append_u32(bytes, static_cast<std::uint32_t>(bits));
                io::append_u32(bytes, static_cast<std::uint32_t>(bits >> 32));
            }
        }
    io::write_file(path, bytes);
}

std::vector<TensorRecord> read_container(const std::filesystem::path& path, nlohmann::json& header) {
    const auto bytes = io::read_file(path);
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
        throw DataError("not a checkpoint file: " + path.string());
    const auto version = io::load_u32(bytes.data() + 8);
    if (version != kContainerVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
    const auto hlen = io::load_u32(bytes.data() + 12);
    if (bytes.size() < 16ull + hlen) throw DataError("truncated checkpoint header: " + path.string());
    try {
        header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + hlen);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt checkpoint header in " + path.string() + ": " + e.what());
    }
    const auto dtype = header.at("dtype").get<std::string>();
    if (dtype != "f32" && dtype != "f64") throw DataError("unknown checkpoint dtype " + dtype);
    const std::size_t width = dtype == "f32" ? 4 : 8;
    const std::size_t base = 16 + hlen;
    std::vector<TensorRecord> out;
    for (const auto& entry : header.at("tensors")) {
        TensorRecord r;
        r.name = entry.at("name").get<std::string>();
        r.shape = entry.at("shape").get<std::vector<std::int64_t>>();
        const auto count = entry.at("count").get<std::size_t>();
        const auto offset = entry.at("offset").get<std::size_t>();
        if (static_cast<std::int64_t>(count) != Tensor<double>::count(r.shape))
            throw DataError("checkpoint tensor " + r.name + " count does not match its shape");
        if (base + offset + count * width > bytes.size())
            throw DataError("checkpoint tensor " + r.name + " runs past end of file");
        r.values.resize(count);
        const std::uint8_t* p = bytes.data() + base + offset;
        for (std::size_t i = 0; i < count; ++i) {
            if (width == 4) {
                r.values[i] = io::load_f32(p + 4 * i);
            } else {
                const std::uint64_t bits =
                    std::uint64_t(io::load_u32(p + 8 * i)) | (std::uint64_t(io::load_u32(p + 8 * i + 4)) << 32);
                r.values[i] = std::bit_cast<double>(bits);
            }
        }
        out.push_back(std::move(r));
    }
    return out;
}

template <typename T>
std::vector<TensorRecord> to_records(const ParamSet<T>& set, const std::string& prefix) {
    std::vector<TensorRecord> out;
    for (const auto& [n, v] : set.entries())
        out.push_back({prefix + n, v.value().shape(), std::vector<double>(v.value().storage().begin(), v.value().storage().end())});
    return out;
}

template <typename T>
void assign_records(ParamSet<T>& set, const std::vector<TensorRecord>& records, const std::string& prefix) {
    std::map<std::string, const TensorRecord*> by_name;
    for (const auto& r : records) by_name[r.name] = &r;
    for (auto& [n, v] : set.entries()) {
        const auto it = by_name.find(prefix + n);
        if (it == by_name.end()) throw DataError("checkpoint is missing tensor " + prefix + n);
        const auto& r = *it->second;
        if (r.shape != v.value().shape())
            throw DataError("checkpoint tensor " + r.name + " has shape " + Tensor<double>(r.shape).shape_string() +
                            ", expected " + v.value().shape_string());
        auto& dst = v.mutable_value().storage();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(r.values[i]);
    }
}

template <typename T>
void save_model(const std::filesystem::path& path, const ModelParams<T>& m) {
    nlohmann::json header{{"kind", "model"},
                          {"model_config", to_json(m.config)},
                          {"architecture", {{"depth_branch", m.arch.depth_branch}, {"feature_fusion", m.arch.feature_fusion}}}};
    write_container(path, header, to_records(m.params), std::is_same_v<T, float>);
}

template <typename T>
ModelParams<T> load_model(const std::filesystem::path& path) {
    nlohmann::json header;
    const auto records = read_container(path, header);
    ModelConfig config;
    try {
        config = model_config_from_json(header.at("model_config"));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint " + path.string() + " has no valid model config: " + e.what());
    }
    auto m = init_model<T>(config, 0);
    if (header.contains("architecture")) {
        m.arch.depth_branch = header["architecture"].value("depth_branch", true);
        m.arch.feature_fusion = header["architecture"].value("feature_fusion", true);
    }
    assign_records(m.params, records);
    return m;
}

#define DADA_INSTANTIATE(T)                                                                                    \
    template class ParamSet<T>;                                                                                \
    template ModelParams<T> init_model<T>(const ModelConfig&, std::uint64_t);                                  \
    template Tensor<T> image_to_chw<T>(std::span<const float>, int, int);                                      \
    template ForwardOutputs<T> forward<T>(const ModelParams<T>&, const ad::Var<T>&, const ForwardOptions&);         \
    template DiscriminatorParams<T> init_discriminator<T>(const DiscriminatorConfig&, std::uint64_t);          \
    template ad::Var<T> discriminator_forward<T>(const DiscriminatorParams<T>&, const ad::Var<T>&);            \
    template std::vector<TensorRecord> to_records<T>(const ParamSet<T>&, const std::string&);                  \
    template void assign_records<T>(ParamSet<T>&, const std::vector<TensorRecord>&, const std::string&);       \
    template void save_model<T>(const std::filesystem::path&, const ModelParams<T>&);                          \
    template ModelParams<T> load_model<T>(const std::filesystem::path&);

DADA_INSTANTIATE(float)
DADA_INSTANTIATE(double)

#undef DADA_INSTANTIATE

}  // namespace dada::model
