#pragma once
// Flat key=value configuration text and run options.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace lrt {

/// Ordered key=value pairs; keys are unique.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Parses "key=value" lines. Blank lines and lines starting with '#' are
/// skipped; whitespace around keys and values is trimmed. Throws
/// std::invalid_argument on a malformed line or repeated key.
KeyValues parse_key_values(std::string_view text);
KeyValues load_key_values(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& kv);

/// Replaces existing keys in place and appends new ones.
void merge_key_values(KeyValues& base, const KeyValues& overrides);
const std::string* find_value(const KeyValues& kv, std::string_view key);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

enum class DType { kF32, kF64 };
DType parse_dtype(std::string_view s);
std::string_view dtype_name(DType d);

}  // namespace lrt
