#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

namespace jsrl {

/// Flat `key = value` text. Blank lines and `#` comments are skipped; keys are
/// case-sensitive; a repeated key keeps its last value. Throws ParseError with
/// the line number on a line without '=' or with an empty key.
std::map<std::string, std::string> parse_config(std::string_view text);
std::map<std::string, std::string> load_config(const std::string& path);
std::string serialize_config(const std::map<std::string, std::string>& settings);

bool parse_bool(const std::string& key, const std::string& value);
int parse_int(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
std::uint64_t parse_u64(const std::string& key, const std::string& value);

}  // namespace jsrl
