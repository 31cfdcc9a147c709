#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dislab/cfg.hpp"
#include "dislab/config.hpp"
#include "dislab/funcid.hpp"
#include "dislab/recursive.hpp"
#include "dislab/sweep.hpp"
#include "dislab/symbolize.hpp"

namespace dislab {

struct AnalysisResult {
  StrategyConfig config;
  DisasmResult disasm;
  std::optional<SweepResult> sweep;  // linear profiles only
  std::vector<FunctionEntry> functions;
  std::optional<Addr> main;
  std::optional<SymbolizationResult> symbols;
  std::optional<CFG> cfg;  // recursive profiles only
  std::vector<JumpTable> tables;
  std::vector<Unresolved> unresolved_tables;
  std::vector<TailCall> tail_calls;
  NonRetSet nonret;
  CfgHooks hooks;
  unsigned rounds = 0;
  std::vector<std::string> warnings;

  bool recursive() const { return config.algorithm == Algorithm::recursive; }
};

AnalysisResult analyze(const BinaryImage& image, const StrategyConfig& config,
                       const Decoder& dec = default_decoder());

}  // namespace dislab
