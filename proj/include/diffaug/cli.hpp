#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "diffaug/detection_eval.hpp"
#include "json.hpp"

namespace diffaug {

/// Exit codes: 0 success, 1 config or runtime error, 2 usage error.
int cli_main(int argc, const char* const* argv);
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

nlohmann::json eval_report_to_json(const EvalReport& r);

/// Precision-recall curve as a standalone SVG document.
std::string pr_curve_svg(const EvalReport& r);

}  // namespace diffaug
