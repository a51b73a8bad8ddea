#pragma once

// Report artifacts: lossless JSON, a delimited-text table grouping methods
// into best/last column pairs per attack, and an optional static SVG bar
// chart.

#include <string>
#include <vector>

#include <json.hpp>

#include "morel/eval/evaluation.hpp"

namespace morel::evaluation {

nlohmann::json report_to_json(const RobustnessReport& report);
RobustnessReport report_from_json(const nlohmann::json& j);

nlohmann::json attack_spec_to_json(const attacks::AttackSpec& spec);
attacks::AttackSpec attack_spec_from_json(const nlohmann::json& j);

/// Rows are (model_id, mode, dataset) groups; column pairs are best/last for
/// clean, each attack and the aggregate.
std::string render_table(const std::vector<RobustnessReport>& reports);

std::string render_svg(const RobustnessReport& report);

/// Writes <out_dir>/report_<kind>.json, .txt (single-report table) and
/// optionally .svg; returns the JSON path.
std::string write_report_artifacts(const RobustnessReport& report, const std::string& out_dir,
                                   bool chart);

}  // namespace morel::evaluation
