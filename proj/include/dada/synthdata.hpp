#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace dada::synth {

struct SceneSpec {
    int height = 64;
    int width = 64;
    int num_classes = 7;
    std::vector<std::string> class_names{"flat", "construction", "object", "nature", "sky", "human", "vehicle"};
    double near_plane = 1.0;
    double far_plane = 10.0;

    /// Throws ConfigError on violated invariants.
    void validate() const;
    int ground_class() const;
    int sky_class() const;
    std::vector<int> object_classes() const;
};

enum class Domain { Source, Target };

std::string to_string(Domain d);
Domain parse_domain(const std::string& s);

struct DomainStyle {
    Domain domain = Domain::Source;
    std::vector<std::array<double, 3>> palette;  // per-class base RGB
    double texture_noise_sigma = 0.0;
    double gamma = 1.0;
    std::array<double, 3> global_tint{1.0, 1.0, 1.0};

    /// The built-in source/target pair: palette hue rotation, gamma 1.0 -> 1.6,
    /// texture noise 0.0 -> 0.08.
    static DomainStyle preset(Domain domain, const SceneSpec& spec);
};

/// One sample. image is H*W*3 interleaved RGB in [0,1], quantized to k/255.
struct Scene {
    int height = 0;
    int width = 0;
    std::vector<float> image;
    std::vector<std::uint8_t> labels;
    std::vector<float> inv_depth;

    bool operator==(const Scene&) const = default;
};

enum class ShapeKind { Box, Ellipse };

/// Fronto-parallel object standing on the ground plane.
struct ObjectSurface {
    int class_id = 0;
    ShapeKind shape = ShapeKind::Box;
    double depth = 0.0;
    double left = 0, right = 0, top = 0, bottom = 0;  // pixel-space bounds

    bool covers(int x, int y) const;
};

/// Geometry of a scene before shading: sky at the far plane, a ground plane
/// below the horizon, and objects at constant depth.
struct SceneLayout {
    SceneSpec spec;
    double horizon = 0.0;       // ground covers pixel rows whose centre lies below this
    double ground_scale = 0.0;  // ground depth at row y is ground_scale / (y + 0.5 - horizon)
    std::vector<ObjectSurface> objects;

    bool ground_covers(int y) const;
    double ground_depth(int y) const;
    double inv_depth(double depth) const;
};

SceneLayout make_layout(const SceneSpec& spec, std::uint64_t seed);

/// z-buffer render of the layout: labels and inverse depth only.
void render_geometry(const SceneLayout& layout, std::vector<std::uint8_t>& labels, std::vector<float>& inv_depth);

Scene generate_scene(const SceneSpec& spec, const DomainStyle& style, std::uint64_t seed);

std::uint64_t sample_seed(std::uint64_t dataset_seed, std::uint64_t index);

/// Deterministic prefix rule: round(fraction * n), at least one.
std::size_t fraction_prefix(std::size_t n, double fraction);

nlohmann::json to_json(const SceneSpec& spec);
SceneSpec spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DomainStyle& style);
DomainStyle style_from_json(const nlohmann::json& j);

/// Flat key = value spec file (height, width, num_classes, class_names,
/// near_plane, far_plane).
SceneSpec load_spec_file(const std::filesystem::path& path);

struct DatasetEntry {
    std::size_t index = 0;
    std::string image, label, depth;
};

struct DatasetManifest {
    int format_version = 1;
    SceneSpec spec;
    DomainStyle style;
    std::uint64_t seed = 0;
    std::vector<DatasetEntry> files;
};

nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

std::string entry_stem(std::size_t index);

void write_scene(const std::filesystem::path& dir, std::size_t index, const Scene& scene);

/// Writes count scenes plus manifest.json into out_dir.
DatasetManifest generate_dataset(const SceneSpec& spec, const DomainStyle& style, std::uint64_t seed,
                                 std::size_t count, const std::filesystem::path& out_dir);

struct AccessCounters {
    std::size_t image_reads = 0;
    std::size_t label_reads = 0;
    std::size_t depth_reads = 0;
    std::size_t blocked_reads = 0;
};

/// In-memory dataset. Images are loaded eagerly; labels and depth lazily,
/// so a guarded (unlabeled-target) view never touches annotation files.
class Dataset {
public:
    static Dataset open(const std::filesystem::path& dir);

    std::size_t size() const { return images_.size(); }
    const DatasetManifest& manifest() const { return manifest_; }
    const SceneSpec& spec() const { return manifest_.spec; }
    const std::filesystem::path& dir() const { return dir_; }

    const std::vector<float>& image(std::size_t i) const;
    const std::vector<std::uint8_t>& labels(std::size_t i) const;
    const std::vector<float>& inv_depth(std::size_t i) const;

    /// When set, label/depth reads throw GuardViolation and are counted as blocked.
    void set_annotation_guard(bool on) { guard_ = on; }
    bool annotation_guard() const { return guard_; }
    const AccessCounters& counters() const { return counters_; }

private:
    std::filesystem::path dir_;
    DatasetManifest manifest_;
    std::vector<std::vector<float>> images_;
    mutable std::vector<std::optional<std::vector<std::uint8_t>>> labels_;
    mutable std::vector<std::optional<std::vector<float>>> depth_;
    mutable AccessCounters counters_;
    bool guard_ = false;
};

}  // namespace dada::synth
