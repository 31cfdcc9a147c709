#pragma once

#include <array>
#include <set>
#include <string>
#include <vector>

#include "dislab/record.hpp"

namespace dislab {

struct Metrics {
  Phase phase = Phase::inst;
  std::uint64_t tp = 0, fp = 0, fn = 0;
  double precision = 1.0;
  double recall = 1.0;
};

// Empty result: precision 1; empty truth: recall 1.
Metrics make_metrics(Phase phase, std::uint64_t tp, std::uint64_t fp, std::uint64_t fn);

using Item = std::array<Addr, 3>;

// Phase items after exclusions. Jump tables are keyed by site.
struct PhaseItems {
  std::set<Item> truth;
  std::set<Item> result;
};
PhaseItems phase_items(const Record& truth, const Record& result, Phase phase);

Metrics score(const Record& truth, const Record& result, Phase phase);

struct ErrorAttribution {
  Phase phase = Phase::inst;
  bool false_positive = true;
  Item item{};
  std::string cause;
};

// Cause names per phase and side; "Other" is always last.
const std::vector<std::string>& cause_vocabulary(Phase phase, bool false_positive);

// image, when given, lets rules inspect the bytes (calls, section bounds).
std::vector<ErrorAttribution> attribute_errors(const Record& truth, const Record& result,
                                               Phase phase,
                                               const BinaryImage* image = nullptr);

std::string format_item(Phase phase, const Item& item);

}  // namespace dislab
