#pragma once

// `key = value` text with `#` comments, shared by model and run configs.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace wsl {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// Blank lines and text after '#' are ignored; keys may not repeat.
KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::string& path);

double parse_double(const std::string& key, const std::string& value);
std::int64_t parse_int(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);
// Comma-separated non-negative integers, e.g. "16,32,64".
std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value);

std::string format_double(double v); // shortest round-trip form
std::string join_sizes(const std::vector<std::size_t>& v);

} // namespace wsl
