#include "dada/kvfile.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "dada/error.hpp"

namespace dada::config {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

KvFile KvFile::parse_text(const std::string& text, const std::string& source) {
    KvFile file;
    file.source = source;
    std::map<std::string, int> first_line;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto hash = raw.find('#');
        const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
        KvEntry e{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no};
        if (e.key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
        if (auto it = first_line.find(e.key); it != first_line.end())
            throw ConfigError(source + ": duplicate key '" + e.key + "' on lines " + std::to_string(it->second) +
                              " and " + std::to_string(line_no));
        first_line[e.key] = line_no;
        file.entries.push_back(std::move(e));
    }
    return file;
}

KvFile KvFile::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str(), path.string());
}

void KvFile::fail(const KvEntry& e, const std::string& what) const {
    throw ConfigError(source + ":" + std::to_string(e.line) + ": key '" + e.key + "': " + what);
}

double parse_double(const KvFile& file, const KvEntry& e) {
    double v = 0;
    const char* b = e.value.data();
    const char* end = b + e.value.size();
    auto [p, ec] = std::from_chars(b, end, v);
    if (ec != std::errc() || p != end || !std::isfinite(v)) file.fail(e, "expected a finite number, got '" + e.value + "'");
    return v;
}

long long parse_int(const KvFile& file, const KvEntry& e) {
    long long v = 0;
    const char* b = e.value.data();
    const char* end = b + e.value.size();
    auto [p, ec] = std::from_chars(b, end, v);
    if (ec != std::errc() || p != end) file.fail(e, "expected an integer, got '" + e.value + "'");
    return v;
}

bool parse_bool(const KvFile& file, const KvEntry& e) {
    if (e.value == "true" || e.value == "1") return true;
    if (e.value == "false" || e.value == "0") return false;
    file.fail(e, "expected true/false, got '" + e.value + "'");
}

std::vector<std::string> parse_list(const std::string& value) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(value);
    while (std::getline(in, item, ',')) {
        const auto t = trim(item);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

}  // namespace dada::config
