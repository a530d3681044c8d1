#pragma once

#include <map>
#include <string>
#include <string_view>

namespace mmta {

// Flat `key = value` text. Blank lines and lines starting with '#' are
// ignored; whitespace around keys and values is trimmed. Later keys win.
using KeyValues = std::map<std::string, std::string, std::less<>>;

KeyValues parse_key_values(std::string_view text, std::string_view source = "<text>");
std::string format_key_values(const KeyValues& values);

// Typed lookups. A malformed value throws ConfigError naming the key.
std::size_t kv_size(const KeyValues& kv, std::string_view key, std::size_t fallback);
double kv_real(const KeyValues& kv, std::string_view key, double fallback);
bool kv_bool(const KeyValues& kv, std::string_view key, bool fallback);
std::string kv_string(const KeyValues& kv, std::string_view key, std::string fallback);

std::size_t parse_size(std::string_view key, std::string_view text);
double parse_real(std::string_view key, std::string_view text);
bool parse_bool(std::string_view key, std::string_view text);

// Shortest text that parses back to exactly `value`.
std::string format_real(double value);

}  // namespace mmta
