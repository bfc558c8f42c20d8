#pragma once

#include <string>

#include "cellmr/regression.hpp"

namespace cellmr {

// JSON model files.  Numbers round-trip exactly (shortest representation
// that parses back to the same double), so save followed by load restores
// the model bitwise.
inline constexpr int model_schema_version = 1;

std::string model_to_json_string(const RegressionModel& model, int indent = 2);
RegressionModel model_from_json_string(const std::string& text);

void save_model(const std::string& path, const RegressionModel& model);
RegressionModel load_model(const std::string& path);

}  // namespace cellmr
