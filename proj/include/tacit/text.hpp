#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace tacit::text {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
std::string to_upper(std::string_view s);

// Collapses every whitespace run to one space and trims the ends.
std::string normalize_whitespace(std::string_view s);

bool contains(std::string_view haystack, std::string_view needle);
bool icontains(std::string_view haystack, std::string_view needle);

// Replaces every `{name}` with the mapped value; unknown placeholders stay.
std::string fill(std::string_view tmpl, const std::vector<std::pair<std::string, std::string>>& values);

std::vector<std::string> split_lines(std::string_view s);

bool is_valid_utf8(std::string_view s);
std::string latin1_to_utf8(std::string_view s);

// 64-bit FNV-1a; stable across platforms and runs.
std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace tacit::text
