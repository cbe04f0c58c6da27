#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace ditmos::cli {

inline constexpr std::string_view kReportSchema = "ditmos.report";
inline constexpr int kReportVersion = 1;

/// Kinds: "eval", "analyze", "plan-memory", "baseline", "train".
nlohmann::json make_report(std::string_view kind, std::uint64_t seed, nlohmann::json results);

/// Every schema violation found, as "path: problem"; empty means valid.
std::vector<std::string> validate_report(const nlohmann::json& report);

/// One "path = value" line per scalar or numeric array in `results`, after a
/// header naming the kind, schema version and seed. Values are printed with
/// the JSON encoder so they parse back to the identical numbers.
std::string text_summary(const nlohmann::json& report);

/// Writes <stem>.json and <stem>.txt into `dir` after validating.
void write_report(const std::filesystem::path& dir, std::string_view stem, const nlohmann::json& report);

}  // namespace ditmos::cli
