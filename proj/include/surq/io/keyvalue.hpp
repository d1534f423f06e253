#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace surq::io {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// `key = value` lines; '#' starts a comment, blank lines are skipped. FormatError on
// lines without '='.
KeyValues read_key_values(const std::filesystem::path& path);

double parse_real(const std::string& key, const std::string& value);
std::uint64_t parse_count(const std::string& key, const std::string& value);
bool parse_flag(const std::string& key, const std::string& value);  // true/false/1/0/yes/no/on/off

}  // namespace surq::io
