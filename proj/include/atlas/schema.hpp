#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace atlas::schema {

inline constexpr std::string_view kPlan = "plan.v1";
inline constexpr std::string_view kCandidates = "candidates.v1";
inline constexpr std::string_view kAssessment = "assessment.v1";
inline constexpr std::string_view kSummary = "summary.v1";
inline constexpr std::string_view kFacts = "facts.v1";
inline constexpr std::string_view kExploreStep = "explore_step.v1";
inline constexpr std::string_view kDigest = "digest.v1";

const std::vector<std::string>& registered();
bool is_registered(std::string_view id);

/// Returns a human-readable error, or nullopt if `value` conforms.
std::optional<std::string> validate(std::string_view id, const nlohmann::json& value);

/// Throws SchemaViolation on nonconformance.
void require_valid(std::string_view id, const nlohmann::json& value);

/// Short shape description appended to prompts and re-asks.
std::string describe(std::string_view id);

}  // namespace atlas::schema
