#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace xmerge {

/// Plain "key=value" text: one pair per line, '#' comments, blank lines
/// ignored, surrounding whitespace trimmed. Later duplicates win.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::istream& in);
KeyValues load_key_values(const std::filesystem::path& path);

double kv_double(const KeyValues& kv, const std::string& key, double fallback);
long long kv_int(const KeyValues& kv, const std::string& key, long long fallback);
std::string kv_string(const KeyValues& kv, const std::string& key, const std::string& fallback);
/// Comma-separated list of doubles; empty when the key is absent.
std::vector<double> kv_doubles(const KeyValues& kv, const std::string& key);

std::string join_doubles(const std::vector<double>& values);

}  // namespace xmerge
