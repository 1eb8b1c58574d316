#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dada/kvfile.hpp"
#include "dada/model.hpp"
#include "dada/trainer.hpp"

namespace dada::config {

// Train config keys: lambda_dep, lambda_adv, gen_lr, gen_momentum,
// gen_weight_decay, disc_lr, disc_beta1, disc_beta2, iterations, seed,
// lr_schedule (constant|poly), eval_every, berhu_fraction, source_fraction,
// disc_first. Absent keys keep their defaults; unknown keys are errors.
train::TrainConfig parse_train_config(const KvFile& file);
train::TrainConfig load_train_config(const std::filesystem::path& path);
std::string emit_train_config(const train::TrainConfig& c);

// Model config keys: backbone_channels (comma list), classifier_dilation,
// num_classes, input_height, input_width.
model::ModelConfig parse_model_config(const KvFile& file);
model::ModelConfig load_model_config(const std::filesystem::path& path);
std::string emit_model_config(const model::ModelConfig& c);

/// FNV-1a 64 of a byte string, printed as 16 hex digits.
std::string content_hash(const std::string& bytes);

struct DatasetRef {
    std::string path;
    std::uint64_t seed = 0;
    std::size_t count = 0;
    std::string domain;
    std::string manifest_hash;
};

DatasetRef describe_dataset(const std::filesystem::path& dir);

/// Provenance record written as experiment.json in every output directory.
struct ExperimentManifest {
    std::string command;
    std::vector<std::string> arguments;
    nlohmann::json resolved_config = nlohmann::json::object();
    std::vector<std::pair<std::string, std::string>> config_hashes;  // (name, hash)
    std::vector<DatasetRef> datasets;
    std::vector<std::uint64_t> seeds;
    std::string artifact_version;
    std::string started_at;
    std::string finished_at;
};

nlohmann::json to_json(const ExperimentManifest& m);
void write_manifest(const std::filesystem::path& out_dir, const ExperimentManifest& m);

/// UTC, second resolution, ISO 8601.
std::string utc_timestamp();

}  // namespace dada::config
