#pragma once

#include <string>
#include <vector>

#include "felab/harness.hpp"

namespace felab {

// 17-significant-digit text for a double: round-trips binary64 exactly;
// infinity prints as "inf".
std::string format_double(double v);

void write_curves_csv(const std::vector<MetricsRecord>& rows, const std::string& path);
std::vector<MetricsRecord> read_curves_csv(const std::string& path);

void write_sweep_summary(const SweepResult& res, const std::string& path);

// dir/curves.csv + dir/summary.json; the directory must already exist.
void emit_curves(const SweepResult& res, const std::string& dir);

}  // namespace felab
