#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace dada::config {

/// One `key = value` line. Lines are 1-based.
struct KvEntry {
    std::string key;
    std::string value;
    int line = 0;
};

/// Flat key-value text: `key = value`, `#` comments, blank lines ignored.
/// Duplicate keys are rejected with both line numbers.
struct KvFile {
    std::string source;
    std::vector<KvEntry> entries;

    static KvFile parse_text(const std::string& text, const std::string& source = "<text>");
    static KvFile load(const std::filesystem::path& path);

    [[noreturn]] void fail(const KvEntry& e, const std::string& what) const;
};

double parse_double(const KvFile& file, const KvEntry& e);
long long parse_int(const KvFile& file, const KvEntry& e);
bool parse_bool(const KvFile& file, const KvEntry& e);
std::vector<std::string> parse_list(const std::string& value);

/// Shortest decimal that round-trips through strtod.
std::string format_double(double v);

}  // namespace dada::config
