#include "dada/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "dada/error.hpp"
#include "dada/image_io.hpp"
#include "dada/kvfile.hpp"
#include "dada/rng.hpp"

namespace dada::synth {

namespace fs = std::filesystem;

namespace {

constexpr double kCameraHeight = 1.5;
constexpr std::array<double, 3> kHaze{0.75, 0.75, 0.80};
constexpr double kHazeStrength = 0.35;
constexpr double kTargetHueShiftDeg = 40.0;

struct ObjectPrior {
    ShapeKind shape;
    double min_w, max_w, min_h, max_h;  // world units
};

ObjectPrior prior_for(const std::string& name, int class_id) {
    if (name == "construction") return {ShapeKind::Box, 2.5, 5.0, 3.0, 7.0};
    if (name == "object") return {ShapeKind::Box, 0.15, 0.3, 2.0, 3.5};
    if (name == "nature") return {ShapeKind::Ellipse, 1.2, 2.2, 1.5, 3.0};
    if (name == "human") return {ShapeKind::Ellipse, 0.4, 0.6, 1.5, 1.9};
    if (name == "vehicle") return {ShapeKind::Box, 1.6, 2.4, 1.0, 1.5};
    return {class_id % 2 ? ShapeKind::Ellipse : ShapeKind::Box, 0.8, 1.5, 0.8, 1.5};
}

std::array<double, 3> default_color(const std::string& name, int class_id, int num_classes) {
    if (name == "flat") return {0.50, 0.45, 0.50};
    if (name == "construction") return {0.55, 0.35, 0.25};
    if (name == "object") return {0.85, 0.75, 0.15};
    if (name == "nature") return {0.25, 0.60, 0.20};
    if (name == "sky") return {0.45, 0.65, 0.95};
    if (name == "human") return {0.85, 0.20, 0.30};
    if (name == "vehicle") return {0.15, 0.25, 0.70};
    // Evenly spaced hues for unnamed classes.
    const double h = 6.0 * class_id / num_classes;
    const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
    std::array<double, 3> rgb{};
    switch (static_cast<int>(h)) {
        case 0: rgb = {1, x, 0}; break;
        case 1: rgb = {x, 1, 0}; break;
        case 2: rgb = {0, 1, x}; break;
        case 3: rgb = {0, x, 1}; break;
        case 4: rgb = {x, 0, 1}; break;
        default: rgb = {1, 0, x}; break;
    }
    for (auto& v : rgb) v = 0.2 + 0.6 * v;
    return rgb;
}

/// Rotation about the grey axis in RGB space.
std::array<double, 3> rotate_hue(const std::array<double, 3>& c, double degrees) {
    const double a = degrees * std::numbers::pi / 180.0;
    const double cs = std::cos(a), sn = std::sin(a);
    const double k = (1.0 - cs) / 3.0, s = sn / std::sqrt(3.0);
    const double m0 = cs + k, m1 = k - s, m2 = k + s;
    std::array<double, 3> out{m0 * c[0] + m1 * c[1] + m2 * c[2], m2 * c[0] + m0 * c[1] + m1 * c[2],
                              m1 * c[0] + m2 * c[1] + m0 * c[2]};
    for (auto& v : out) v = std::clamp(v, 0.0, 1.0);
    return out;
}

double frac(double v) { return v - std::floor(v); }

/// Class-specific brightness pattern in surface-local coordinates (u, v in [0,1]).
double texture(const std::string& name, double u, double v, double depth) {
    if (name == "flat") return 0.9 + 0.15 * (static_cast<long>(std::floor(depth * 1.5)) % 2);
    if (name == "construction") {
        const double fu = frac(u * 4.0), fv = frac(v * 6.0);
        return (fu > 0.3 && fu < 0.7 && fv > 0.3 && fv < 0.7) ? 0.55 : 1.0;
    }
    if (name == "nature") return 0.8 + 0.2 * std::sin(13.0 * u) * std::sin(11.0 * v);
    if (name == "sky") return 1.05 - 0.2 * v;
    if (name == "human") return v < 0.22 ? 1.4 : 1.0;
    if (name == "vehicle") {
        if (v > 0.75) return 0.3;
        if (v > 0.1 && v < 0.4) return 1.4;
        return 1.0;
    }
    return 1.0;
}

float quantize(double v) {
    const auto k = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    return static_cast<float>(k) / 255.0f;
}

int find_class(const SceneSpec& spec, const std::string& name, int fallback) {
    const auto it = std::find(spec.class_names.begin(), spec.class_names.end(), name);
    return it == spec.class_names.end() ? fallback : static_cast<int>(it - spec.class_names.begin());
}

}  // namespace

void SceneSpec::validate() const {
    if (num_classes < 2 || num_classes > 255) throw ConfigError("scene spec: num_classes must be in [2, 255]");
    if (height < 16 || width < 16) throw ConfigError("scene spec: height and width must be >= 16");
    if (static_cast<int>(class_names.size()) != num_classes)
        throw ConfigError("scene spec: class_names has " + std::to_string(class_names.size()) + " entries, expected " +
                          std::to_string(num_classes));
    if (!(near_plane > 0.0)) throw ConfigError("scene spec: near_plane must be positive");
    if (!(far_plane > near_plane)) throw ConfigError("scene spec: far_plane must exceed near_plane");
}

int SceneSpec::ground_class() const { return find_class(*this, "flat", 0); }

int SceneSpec::sky_class() const {
    const int g = ground_class();
    return find_class(*this, "sky", g == 1 ? 0 : 1);
}

std::vector<int> SceneSpec::object_classes() const {
    std::vector<int> out;
    for (int c = 0; c < num_classes; ++c)
        if (c != ground_class() && c != sky_class()) out.push_back(c);
    return out;
}

std::string to_string(Domain d) { return d == Domain::Source ? "source" : "target"; }

Domain parse_domain(const std::string& s) {
    if (s == "source") return Domain::Source;
    if (s == "target") return Domain::Target;
    throw ConfigError("domain must be 'source' or 'target', got '" + s + "'");
}

DomainStyle DomainStyle::preset(Domain domain, const SceneSpec& spec) {
    DomainStyle style;
    style.domain = domain;
    for (int c = 0; c < spec.num_classes; ++c) {
        const auto base = default_color(spec.class_names[static_cast<std::size_t>(c)], c, spec.num_classes);
        style.palette.push_back(domain == Domain::Source ? base : rotate_hue(base, kTargetHueShiftDeg));
    }
    if (domain == Domain::Target) {
        style.gamma = 1.6;
        style.texture_noise_sigma = 0.08;
        style.global_tint = {1.0, 0.93, 0.85};
    }
    return style;
}

bool ObjectSurface::covers(int x, int y) const {
    const double px = x + 0.5, py = y + 0.5;
    if (shape == ShapeKind::Box) return px >= left && px < right && py >= top && py < bottom;
    const double cx = 0.5 * (left + right), cy = 0.5 * (top + bottom);
    const double rx = 0.5 * (right - left), ry = 0.5 * (bottom - top);
    const double dx = (px - cx) / rx, dy = (py - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
}

bool SceneLayout::ground_covers(int y) const { return y + 0.5 > horizon; }

double SceneLayout::ground_depth(int y) const {
    return std::min(spec.far_plane, ground_scale / (y + 0.5 - horizon));
}

double SceneLayout::inv_depth(double depth) const { return std::clamp(spec.near_plane / depth, 1e-6, 1.0); }

SceneLayout make_layout(const SceneSpec& spec, std::uint64_t seed) {
    spec.validate();
    if (spec.num_classes < 4)
        throw ConfigError("scene generator needs at least 4 classes (ground, sky and two object classes)");
    Rng rng(seed);
    SceneLayout layout;
    layout.spec = spec;
    layout.horizon = spec.height * rng.uniform(0.38, 0.5);
    layout.ground_scale = spec.near_plane * (spec.height - 0.5 - layout.horizon);

    auto pool = spec.object_classes();
    const auto max_objects = std::min<std::int64_t>(8, static_cast<std::int64_t>(pool.size()));
    const auto n = rng.integer(2, max_objects);
    for (std::size_t i = pool.size(); i > 1; --i)
        std::swap(pool[i - 1], pool[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i) - 1))]);

    const double inv_lo = spec.near_plane / (0.75 * spec.far_plane);
    const double inv_hi = 1.0 / 1.4;
    for (std::int64_t i = 0; i < n; ++i) {
        ObjectSurface obj;
        obj.class_id = pool[static_cast<std::size_t>(i)];
        const auto prior = prior_for(spec.class_names[static_cast<std::size_t>(obj.class_id)], obj.class_id);
        obj.shape = prior.shape;
        obj.depth = spec.near_plane / rng.uniform(inv_lo, inv_hi);
        const double px_per_unit = layout.ground_scale / (obj.depth * kCameraHeight);
        const double w = std::max(2.0, rng.uniform(prior.min_w, prior.max_w) * px_per_unit);
        const double h = std::max(2.0, rng.uniform(prior.min_h, prior.max_h) * px_per_unit);
        const double cx = rng.uniform(0.0, spec.width);
        obj.bottom = layout.horizon + layout.ground_scale / obj.depth;
        obj.top = obj.bottom - h;
        obj.left = cx - 0.5 * w;
        obj.right = cx + 0.5 * w;
        layout.objects.push_back(obj);
    }
    return layout;
}

void render_geometry(const SceneLayout& layout, std::vector<std::uint8_t>& labels, std::vector<float>& inv_depth) {
    const auto& spec = layout.spec;
    const auto hw = static_cast<std::size_t>(spec.height) * spec.width;
    labels.assign(hw, static_cast<std::uint8_t>(spec.sky_class()));
    std::vector<double> zbuf(hw, layout.inv_depth(spec.far_plane));
    for (int y = 0; y < spec.height; ++y) {
        if (!layout.ground_covers(y)) continue;
        const double z = layout.inv_depth(layout.ground_depth(y));
        for (int x = 0; x < spec.width; ++x) {
            const auto i = static_cast<std::size_t>(y) * spec.width + x;
            if (z >= zbuf[i]) {
                zbuf[i] = z;
                labels[i] = static_cast<std::uint8_t>(spec.ground_class());
            }
        }
    }
    for (const auto& obj : layout.objects) {
        const double z = layout.inv_depth(obj.depth);
        const int y0 = std::max(0, static_cast<int>(std::floor(obj.top)));
        const int y1 = std::min(spec.height - 1, static_cast<int>(std::ceil(obj.bottom)));
        const int x0 = std::max(0, static_cast<int>(std::floor(obj.left)));
        const int x1 = std::min(spec.width - 1, static_cast<int>(std::ceil(obj.right)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const auto i = static_cast<std::size_t>(y) * spec.width + x;
                if (obj.covers(x, y) && z >= zbuf[i]) {
                    zbuf[i] = z;
                    labels[i] = static_cast<std::uint8_t>(obj.class_id);
                }
            }
    }
    inv_depth.assign(zbuf.begin(), zbuf.end());
}

Scene generate_scene(const SceneSpec& spec, const DomainStyle& style, std::uint64_t seed) {
    if (static_cast<int>(style.palette.size()) != spec.num_classes)
        throw ConfigError("domain style palette has " + std::to_string(style.palette.size()) + " colors, expected " +
                          std::to_string(spec.num_classes));
    const auto layout = make_layout(spec, seed);
    Scene scene;
    scene.height = spec.height;
    scene.width = spec.width;
    render_geometry(layout, scene.labels, scene.inv_depth);

    // Shading draws from a stream independent of the layout stream so that
    // geometry is identical across domains for the same seed.
    Rng rng(hash_combine(seed, 0x5348414445ull));
    const double brightness = rng.uniform(0.85, 1.15);
    const int sky = spec.sky_class();
    const auto hw = static_cast<std::size_t>(spec.height) * spec.width;
    scene.image.resize(hw * 3);

    // Owner surface per pixel, used for texture coordinates.
    std::vector<int> owner(hw, -1);
    for (std::size_t k = 0; k < layout.objects.size(); ++k) {
        const auto& obj = layout.objects[k];
        for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x) {
                const auto i = static_cast<std::size_t>(y) * spec.width + x;
                if (scene.labels[i] == obj.class_id && obj.covers(x, y)) owner[i] = static_cast<int>(k);
            }
    }

    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) {
            const auto i = static_cast<std::size_t>(y) * spec.width + x;
            const int cls = scene.labels[i];
            const auto& name = spec.class_names[static_cast<std::size_t>(cls)];
            double u = (x + 0.5) / spec.width, v = (y + 0.5) / spec.height;
            double depth = spec.near_plane / scene.inv_depth[i];
            if (owner[i] >= 0) {
                const auto& obj = layout.objects[static_cast<std::size_t>(owner[i])];
                u = (x + 0.5 - obj.left) / (obj.right - obj.left);
                v = (y + 0.5 - obj.top) / (obj.bottom - obj.top);
            } else if (cls == sky) {
                v = (y + 0.5) / std::max(1.0, layout.horizon);
            }
            const double b = texture(name, u, v, depth) * brightness;
            const double haze = kHazeStrength * (1.0 - scene.inv_depth[i]);
            for (int ch = 0; ch < 3; ++ch) {
                double c = style.palette[static_cast<std::size_t>(cls)][ch] * b;
                c = (1.0 - haze) * c + haze * kHaze[ch];
                c = std::clamp(c * style.global_tint[ch], 0.0, 1.0);
                c = std::pow(c, style.gamma);
                if (style.texture_noise_sigma > 0) c += style.texture_noise_sigma * rng.normal();
                scene.image[i * 3 + ch] = quantize(c);
            }
        }
    return scene;
}

std::uint64_t sample_seed(std::uint64_t dataset_seed, std::uint64_t index) { return hash_combine(dataset_seed, index); }

std::size_t fraction_prefix(std::size_t n, double fraction) {
    if (!(fraction > 0.0) || fraction > 1.0) throw ConfigError("source fraction must lie in (0, 1]");
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    return std::clamp<std::size_t>(k, 1, n);
}

nlohmann::json to_json(const SceneSpec& spec) {
    return {{"height", spec.height},         {"width", spec.width},
            {"num_classes", spec.num_classes}, {"class_names", spec.class_names},
            {"near_plane", spec.near_plane},   {"far_plane", spec.far_plane}};
}

SceneSpec spec_from_json(const nlohmann::json& j) {
    SceneSpec s;
    s.height = j.at("height").get<int>();
    s.width = j.at("width").get<int>();
    s.num_classes = j.at("num_classes").get<int>();
    s.class_names = j.at("class_names").get<std::vector<std::string>>();
    s.near_plane = j.at("near_plane").get<double>();
    s.far_plane = j.at("far_plane").get<double>();
    s.validate();
    return s;
}

nlohmann::json to_json(const DomainStyle& style) {
    return {{"domain", to_string(style.domain)},
            {"palette", style.palette},
            {"texture_noise_sigma", style.texture_noise_sigma},
            {"gamma", style.gamma},
            {"global_tint", style.global_tint}};
}

DomainStyle style_from_json(const nlohmann::json& j) {
    DomainStyle s;
    s.domain = parse_domain(j.at("domain").get<std::string>());
    s.palette = j.at("palette").get<std::vector<std::array<double, 3>>>();
    s.texture_noise_sigma = j.at("texture_noise_sigma").get<double>();
    s.gamma = j.at("gamma").get<double>();
    s.global_tint = j.at("global_tint").get<std::array<double, 3>>();
    return s;
}

SceneSpec load_spec_file(const fs::path& path) {
    const auto file = config::KvFile::load(path);
    SceneSpec spec;
    bool names_given = false;
    for (const auto& e : file.entries) {
        if (e.key == "height") spec.height = static_cast<int>(config::parse_int(file, e));
        else if (e.key == "width") spec.width = static_cast<int>(config::parse_int(file, e));
        else if (e.key == "num_classes") spec.num_classes = static_cast<int>(config::parse_int(file, e));
        else if (e.key == "class_names") {
            spec.class_names = config::parse_list(e.value);
            names_given = true;
        } else if (e.key == "near_plane") spec.near_plane = config::parse_double(file, e);
        else if (e.key == "far_plane") spec.far_plane = config::parse_double(file, e);
        else file.fail(e, "unknown key");
    }
    if (!names_given && spec.num_classes != 7) {
        spec.class_names.clear();
        for (int c = 0; c < spec.num_classes; ++c) spec.class_names.push_back("class" + std::to_string(c));
    }
    spec.validate();
    return spec;
}

nlohmann::json to_json(const DatasetManifest& m) {
    nlohmann::json files = nlohmann::json::array();
    for (const auto& f : m.files)
        files.push_back({{"index", f.index}, {"image", f.image}, {"label", f.label}, {"depth", f.depth}});
    return {{"format_version", m.format_version},
            {"spec", to_json(m.spec)},
            {"style", to_json(m.style)},
            {"seed", m.seed},
            {"count", m.files.size()},
            {"files", files}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
    DatasetManifest m;
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != 1) throw DataError("unsupported dataset format version " + std::to_string(m.format_version));
    m.spec = spec_from_json(j.at("spec"));
    m.style = style_from_json(j.at("style"));
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& f : j.at("files"))
        m.files.push_back({f.at("index").get<std::size_t>(), f.at("image").get<std::string>(),
                           f.at("label").get<std::string>(), f.at("depth").get<std::string>()});
    if (j.contains("count") && j.at("count").get<std::size_t>() != m.files.size())
        throw DataError("manifest count does not match file list");
    return m;
}

std::string entry_stem(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06zu", index);
    return buf;
}

void write_scene(const fs::path& dir, std::size_t index, const Scene& scene) {
    const auto stem = entry_stem(index);
    for (const char* sub : {"images", "labels", "depth"}) fs::create_directories(dir / sub);
    const auto w = static_cast<std::uint32_t>(scene.width), h = static_cast<std::uint32_t>(scene.height);
    io::Image8 rgb{w, h, 3, {}};
    rgb.pixels.reserve(scene.image.size());
    for (float v : scene.image) rgb.pixels.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
    io::write_png(dir / "images" / (stem + ".png"), rgb);
    io::write_png(dir / "labels" / (stem + ".png"), io::Image8{w, h, 1, scene.labels});
    io::write_depth(dir / "depth" / (stem + ".bin"), h, w, scene.inv_depth);
}

DatasetManifest generate_dataset(const SceneSpec& spec, const DomainStyle& style, std::uint64_t seed,
                                 std::size_t count, const fs::path& out_dir) {
    spec.validate();
    if (count < 1) throw ConfigError("dataset count must be at least 1");
    std::error_code ec;
    for (const char* sub : {"images", "labels", "depth"}) {
        fs::create_directories(out_dir / sub, ec);
        if (ec) throw DataError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
    }
    DatasetManifest m;
    m.spec = spec;
    m.style = style;
    m.seed = seed;
    for (std::size_t i = 0; i < count; ++i) {
        write_scene(out_dir, i, generate_scene(spec, style, sample_seed(seed, i)));
        const auto stem = entry_stem(i);
        m.files.push_back({i, "images/" + stem + ".png", "labels/" + stem + ".png", "depth/" + stem + ".bin"});
    }
    const auto text = to_json(m).dump(2) + "\n";
    io::write_file(out_dir / "manifest.json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    return m;
}

Dataset Dataset::open(const fs::path& dir) {
    Dataset ds;
    ds.dir_ = dir;
    const auto manifest_path = dir / "manifest.json";
    try {
        const auto bytes = io::read_file(manifest_path);
        ds.manifest_ = manifest_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("invalid manifest " + manifest_path.string() + ": " + e.what());
    } catch (const ConfigError& e) {
        throw DataError("invalid manifest " + manifest_path.string() + ": " + e.what());
    }
    const auto& spec = ds.manifest_.spec;
    for (const auto& f : ds.manifest_.files) {
        const auto img = io::read_png(dir / f.image);
        if (img.channels != 3 || static_cast<int>(img.width) != spec.width || static_cast<int>(img.height) != spec.height)
            throw DataError("image " + (dir / f.image).string() + " does not match the manifest spec");
        std::vector<float> v(img.pixels.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(img.pixels[i]) / 255.0f;
        ds.images_.push_back(std::move(v));
    }
    ds.labels_.resize(ds.images_.size());
    ds.depth_.resize(ds.images_.size());
    return ds;
}

const std::vector<float>& Dataset::image(std::size_t i) const {
    ++counters_.image_reads;
    return images_.at(i);
}

const std::vector<std::uint8_t>& Dataset::labels(std::size_t i) const {
    if (guard_) {
        ++counters_.blocked_reads;
        throw GuardViolation("attempted to read target labels (index " + std::to_string(i) + ") during training");
    }
    ++counters_.label_reads;
    auto& slot = labels_.at(i);
    if (!slot) {
        const auto path = dir_ / manifest_.files[i].label;
        auto img = io::read_png(path);
        if (img.channels != 1 || static_cast<int>(img.width) != spec().width ||
            static_cast<int>(img.height) != spec().height)
            throw DataError("label map " + path.string() + " does not match the manifest spec");
        for (auto v : img.pixels)
            if (v >= spec().num_classes) throw DataError("label map " + path.string() + " has class index out of range");
        slot = std::move(img.pixels);
    }
    return *slot;
}

const std::vector<float>& Dataset::inv_depth(std::size_t i) const {
    if (guard_) {
        ++counters_.blocked_reads;
        throw GuardViolation("attempted to read target depth (index " + std::to_string(i) + ") during training");
    }
    ++counters_.depth_reads;
    auto& slot = depth_.at(i);
    if (!slot) {
        const auto path = dir_ / manifest_.files[i].depth;
        std::uint32_t h = 0, w = 0;
        auto values = io::read_depth(path, h, w);
        if (static_cast<int>(h) != spec().height || static_cast<int>(w) != spec().width)
            throw DataError("depth map " + path.string() + " does not match the manifest spec");
        slot = std::move(values);
    }
    return *slot;
}

}  // namespace dada::synth
