#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "dislab/config.hpp"
#include "dislab/image.hpp"
#include "dislab/pipeline.hpp"
#include "dislab/record.hpp"

namespace dislab::testing {

inline std::filesystem::path corpus_dir() { return DISLAB_CORPUS_DIR; }

inline std::string fixture_path(const std::string& name) {
  return (corpus_dir() / (name + ".fix")).string();
}

inline BinaryImage fixture(const std::string& name) {
  return load_binary(fixture_path(name));
}

inline Record truth(const std::string& name) {
  return load_record((corpus_dir() / (name + ".gt")).string());
}

// Names of every fixture that has a ground-truth file, sorted.
inline std::vector<std::string> all_fixtures() {
  std::vector<std::string> out;
  for (const auto& e : std::filesystem::directory_iterator(corpus_dir()))
    if (e.path().extension() == ".gt") out.push_back(e.path().stem().string());
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<std::string> mixed_corpus() { return {"mixed1", "mixed2", "mixed3"}; }

inline StrategyConfig config_for(const std::string& prof,
                                 const std::vector<std::string>& sets = {}) {
  StrategyConfig c = profile(prof);
  for (const auto& s : sets) apply_assignment(c, s);
  return c;
}

inline AnalysisResult run(const std::string& name, const std::string& prof,
                          const std::vector<std::string>& sets = {}) {
  return analyze(fixture(name), config_for(prof, sets));
}

inline Record run_record(const std::string& name, const std::string& prof,
                         const std::vector<std::string>& sets = {}) {
  return to_record(run(name, prof, sets));
}

inline Addr sym(const BinaryImage& img, const std::string& name) {
  const SymbolEntry* s = img.symbol_named(name);
  if (!s) throw std::runtime_error("no symbol " + name);
  return s->vaddr;
}

}  // namespace dislab::testing
