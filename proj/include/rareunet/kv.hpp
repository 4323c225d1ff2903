#ifndef RAREUNET_KV_HPP
#define RAREUNET_KV_HPP

#include <cstdint>
#include <map>
#include <string>

namespace rareunet {

// Flat key=value text. Blank lines and lines starting with '#' are skipped;
// whitespace around keys and values is trimmed.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
// One "key=value\n" line per entry, in key order.
std::string format_key_values(const KeyValues& kv);

// Typed lookups. Missing keys return the fallback; malformed values throw ConfigError.
std::string kv_string(const KeyValues& kv, const std::string& key, const std::string& fallback);
int64_t kv_int(const KeyValues& kv, const std::string& key, int64_t fallback);
uint64_t kv_u64(const KeyValues& kv, const std::string& key, uint64_t fallback);
double kv_double(const KeyValues& kv, const std::string& key, double fallback);
bool kv_bool(const KeyValues& kv, const std::string& key, bool fallback);

// Shortest decimal text that parses back to the same float/double.
std::string format_float(float v);
std::string format_double(double v);

}  // namespace rareunet

#endif  // RAREUNET_KV_HPP
