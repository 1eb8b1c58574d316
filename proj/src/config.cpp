#include "dada/config.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "dada/error.hpp"
#include "dada/image_io.hpp"

namespace dada::config {

namespace fs = std::filesystem;

namespace {

void require(bool ok, const KvFile& file, const KvEntry& e, const char* rule) {
    if (!ok) file.fail(e, std::string("value ") + e.value + " violates " + rule);
}

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + std::to_string(v[i]);
    return out;
}

}  // namespace

train::TrainConfig parse_train_config(const KvFile& file) {
    train::TrainConfig c;
    for (const auto& e : file.entries) {
        const auto& k = e.key;
        if (k == "lambda_dep") {
            c.lambda_dep = parse_double(file, e);
            require(c.lambda_dep >= 0, file, e, ">= 0");
        } else if (k == "lambda_adv") {
            c.lambda_adv = parse_double(file, e);
            require(c.lambda_adv >= 0, file, e, ">= 0");
        } else if (k == "gen_lr") {
            c.gen_lr = parse_double(file, e);
            require(c.gen_lr > 0, file, e, "> 0");
        } else if (k == "gen_momentum") {
            c.gen_momentum = parse_double(file, e);
            require(c.gen_momentum >= 0 && c.gen_momentum < 1, file, e, "[0, 1)");
        } else if (k == "gen_weight_decay") {
            c.gen_weight_decay = parse_double(file, e);
            require(c.gen_weight_decay >= 0, file, e, ">= 0");
        } else if (k == "disc_lr") {
            c.disc_lr = parse_double(file, e);
            require(c.disc_lr > 0, file, e, "> 0");
        } else if (k == "disc_beta1") {
            c.disc_beta1 = parse_double(file, e);
            require(c.disc_beta1 >= 0 && c.disc_beta1 < 1, file, e, "[0, 1)");
        } else if (k == "disc_beta2") {
            c.disc_beta2 = parse_double(file, e);
            require(c.disc_beta2 >= 0 && c.disc_beta2 < 1, file, e, "[0, 1)");
        } else if (k == "iterations") {
            c.iterations = parse_int(file, e);
            require(c.iterations >= 0, file, e, ">= 0");
        } else if (k == "seed") {
            const auto s = parse_int(file, e);
            require(s >= 0, file, e, ">= 0");
            c.seed = static_cast<std::uint64_t>(s);
        } else if (k == "lr_schedule") {
            if (e.value == "constant") c.lr_schedule = train::LrSchedule::Constant;
            else if (e.value == "poly") c.lr_schedule = train::LrSchedule::Poly;
            else file.fail(e, "expected constant or poly, got '" + e.value + "'");
        } else if (k == "eval_every") {
            c.eval_every = parse_int(file, e);
            require(c.eval_every >= 0, file, e, ">= 0");
        } else if (k == "berhu_fraction") {
            c.berhu_fraction = parse_double(file, e);
            require(c.berhu_fraction > 0, file, e, "> 0");
        } else if (k == "source_fraction") {
            c.source_fraction = parse_double(file, e);
            require(c.source_fraction > 0 && c.source_fraction <= 1, file, e, "(0, 1]");
        } else if (k == "disc_first") {
            c.disc_first = parse_bool(file, e);
        } else {
            file.fail(e, "unknown key");
        }
    }
    c.validate();
    return c;
}

train::TrainConfig load_train_config(const fs::path& path) { return parse_train_config(KvFile::load(path)); }

std::string emit_train_config(const train::TrainConfig& c) {
    std::ostringstream out;
    out << "lambda_dep = " << format_double(c.lambda_dep) << "\n"
        << "lambda_adv = " << format_double(c.lambda_adv) << "\n"
        << "gen_lr = " << format_double(c.gen_lr) << "\n"
        << "gen_momentum = " << format_double(c.gen_momentum) << "\n"
        << "gen_weight_decay = " << format_double(c.gen_weight_decay) << "\n"
        << "disc_lr = " << format_double(c.disc_lr) << "\n"
        << "disc_beta1 = " << format_double(c.disc_beta1) << "\n"
        << "disc_beta2 = " << format_double(c.disc_beta2) << "\n"
        << "iterations = " << c.iterations << "\n"
        << "seed = " << c.seed << "\n"
        << "lr_schedule = " << (c.lr_schedule == train::LrSchedule::Poly ? "poly" : "constant") << "\n"
        << "eval_every = " << c.eval_every << "\n"
        << "berhu_fraction = " << format_double(c.berhu_fraction) << "\n"
        << "source_fraction = " << format_double(c.source_fraction) << "\n"
        << "disc_first = " << (c.disc_first ? "true" : "false") << "\n";
    return out.str();
}

model::ModelConfig parse_model_config(const KvFile& file) {
    model::ModelConfig c;
    for (const auto& e : file.entries) {
        const auto& k = e.key;
        if (k == "backbone_channels") {
            c.backbone_channels.clear();
            for (const auto& item : parse_list(e.value)) {
                KvEntry sub{e.key, item, e.line};
                c.backbone_channels.push_back(static_cast<int>(parse_int(file, sub)));
            }
            require(!c.backbone_channels.empty(), file, e, "non-empty list");
        } else if (k == "classifier_dilation") {
            c.classifier_dilation = static_cast<int>(parse_int(file, e));
        } else if (k == "num_classes") {
            c.num_classes = static_cast<int>(parse_int(file, e));
        } else if (k == "input_height") {
            c.input_height = static_cast<int>(parse_int(file, e));
        } else if (k == "input_width") {
            c.input_width = static_cast<int>(parse_int(file, e));
        } else {
            file.fail(e, "unknown key");
        }
    }
    c.validate();
    return c;
}

model::ModelConfig load_model_config(const fs::path& path) { return parse_model_config(KvFile::load(path)); }

std::string emit_model_config(const model::ModelConfig& c) {
    std::ostringstream out;
    out << "backbone_channels = " << join_ints(c.backbone_channels) << "\n"
        << "classifier_dilation = " << c.classifier_dilation << "\n"
        << "num_classes = " << c.num_classes << "\n"
        << "input_height = " << c.input_height << "\n"
        << "input_width = " << c.input_width << "\n";
    return out.str();
}

std::string content_hash(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

DatasetRef describe_dataset(const fs::path& dir) {
    const auto bytes = io::read_file(dir / "manifest.json");
    const std::string text(bytes.begin(), bytes.end());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed manifest " + (dir / "manifest.json").string() + ": " + e.what());
    }
    DatasetRef ref;
    ref.path = dir.string();
    ref.seed = j.value("seed", std::uint64_t{0});
    ref.count = j.contains("files") ? j["files"].size() : 0;
    if (j.contains("style") && j["style"].contains("domain")) ref.domain = j["style"]["domain"].get<std::string>();
    ref.manifest_hash = content_hash(text);
    return ref;
}

nlohmann::json to_json(const ExperimentManifest& m) {
    nlohmann::json hashes = nlohmann::json::object();
    for (const auto& [name, h] : m.config_hashes) hashes[name] = h;
    nlohmann::json datasets = nlohmann::json::array();
    for (const auto& d : m.datasets)
        datasets.push_back({{"path", d.path},
                            {"seed", d.seed},
                            {"count", d.count},
                            {"domain", d.domain},
                            {"manifest_hash", d.manifest_hash}});
    return {{"command", m.command},
            {"arguments", m.arguments},
            {"resolved_config", m.resolved_config},
            {"config_hashes", hashes},
            {"datasets", datasets},
            {"seeds", m.seeds},
            {"artifact_version", m.artifact_version},
            {"started_at", m.started_at},
            {"finished_at", m.finished_at}};
}

void write_manifest(const fs::path& out_dir, const ExperimentManifest& m) {
    const auto text = to_json(m).dump(2) + "\n";
    io::write_file(out_dir / "experiment.json", std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace dada::config
