#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace haru {

// Flat "key = value" text: one pair per line, '#' starts a comment, blank lines ignored.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& kv);

double kv_double(const KeyValues& kv, const std::string& key, double fallback);
std::uint64_t kv_uint(const KeyValues& kv, const std::string& key, std::uint64_t fallback);
bool kv_bool(const KeyValues& kv, const std::string& key, bool fallback);
std::string kv_string(const KeyValues& kv, const std::string& key, const std::string& fallback);
// Comma-separated list of unsigned integers.
std::vector<std::uint64_t> kv_uint_list(const KeyValues& kv, const std::string& key,
                                        const std::vector<std::uint64_t>& fallback);

// Shortest text that parses back to the same double.
std::string format_double(double v);

std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace haru
