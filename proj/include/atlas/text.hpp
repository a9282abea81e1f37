#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace atlas::text {

std::string to_lower(std::string_view s);

/// Lowercased maximal runs of ASCII alphanumerics. Everything else separates.
std::vector<std::string> tokens(std::string_view s);
std::set<std::string> token_set(std::string_view s);

/// 64-bit FNV-1a. Stable across platforms and runs.
std::uint64_t fnv1a64(std::string_view s);
std::string hex64(std::uint64_t v);

/// Number of whitespace-separated words; used as a deterministic token count
/// by backends that do not report usage.
std::size_t word_count(std::string_view s);

/// Cuts `s` to at most `max_bytes` without splitting a UTF-8 sequence.
std::string truncate(std::string_view s, std::size_t max_bytes);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b);

}  // namespace atlas::text
