#pragma once

#include <string>
#include <vector>

#include "dislab/eval.hpp"

namespace dislab {

struct ReportRow {
  std::string profile;
  std::string binary;
  Metrics metrics;
};

enum class ReportFormat { table, csv };

struct Summary {
  std::string profile;
  Phase phase = Phase::inst;
  std::size_t binaries = 0;
  double avg_pre = 0, avg_rec = 0, min_pre = 1, min_rec = 1;
};

// One summary per (profile, phase), profiles in first-seen order.
std::vector<Summary> summarize(const std::vector<ReportRow>& rows);

std::string emit_report(const std::vector<ReportRow>& rows, ReportFormat format);

// Each non-baseline profile next to the baseline, per phase (average
// precision/recall and their differences).
std::string emit_ablation(const std::vector<ReportRow>& rows,
                          const std::string& baseline = "pure");

}  // namespace dislab
