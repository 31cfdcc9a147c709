#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>

#include "dislab/config.hpp"
#include "dislab/eval.hpp"
#include "dislab/image.hpp"
#include "dislab/pipeline.hpp"
#include "dislab/record.hpp"
#include "dislab/report.hpp"

namespace fs = std::filesystem;
using namespace dislab;

namespace {

enum Exit { ok = 0, usage = 1, input = 2, internal = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out << text;
}

std::string profile_list() {
  std::string s;
  for (const auto& p : profile_names()) s += (s.empty() ? "" : ", ") + p;
  return s;
}

StrategyConfig build_config(const std::string& name, const std::string& config_file,
                            const std::vector<std::string>& sets) {
  StrategyConfig cfg;
  try {
    cfg = profile(name);
  } catch (const UnknownProfile&) {
    throw UsageError("unknown profile '" + name + "' (known: " + profile_list() + ")");
  }
  try {
    if (!config_file.empty()) apply_config_text(cfg, read_file(config_file));
    for (const auto& s : sets) apply_assignment(cfg, s);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

Record run(const std::string& binary, const StrategyConfig& cfg,
           std::vector<std::string>* warnings) {
  BinaryImage img;
  try {
    img = load_binary(binary);
  } catch (const LoadError& e) {
    throw InputError(binary + ": " + e.what() + " [" + e.field() + "]");
  }
  AnalysisResult res = analyze(img, cfg);
  if (warnings) *warnings = res.warnings;
  return to_record(res);
}

Record load(const std::string& path) {
  try {
    return parse_record(read_file(path));
  } catch (const FormatError& e) {
    throw InputError(path + ": " + e.what());
  }
}

std::vector<Phase> parse_phases(const std::vector<std::string>& names) {
  if (names.empty()) return all_phases();
  std::vector<Phase> out;
  for (const auto& n : names) {
    auto p = phase_from(n);
    if (!p) throw UsageError("unknown phase '" + n + "'");
    out.push_back(*p);
  }
  return out;
}

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

int cmd_disasm(const std::string& binary, const std::string& prof,
               const std::string& config_file, const std::vector<std::string>& sets,
               const std::string& out) {
  StrategyConfig cfg = build_config(prof, config_file, sets);
  std::vector<std::string> warnings;
  Record r = run(binary, cfg, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  std::string text = emit_record(r);
  if (out.empty() || out == "-")
    std::cout << text;
  else
    write_file(out, text);
  return ok;
}

int cmd_eval(const std::string& truth_path, const std::string& result_path,
             const std::vector<std::string>& phase_names, bool attribute,
             const std::string& binary) {
  Record truth = load(truth_path);
  Record result = load(result_path);
  auto phases = parse_phases(phase_names);
  std::optional<BinaryImage> img;
  if (!binary.empty()) {
    try {
      img = load_binary(binary);
    } catch (const LoadError& e) {
      throw InputError(binary + ": " + e.what());
    }
  }
  if (!truth.instructions.empty() && !result.instructions.empty()) {
    bool shared = false;
    for (const auto& [a, ir] : result.instructions)
      if (truth.instruction_covering(a) || truth.in_padding(a)) {
        shared = true;
        break;
      }
    if (!shared) std::cerr << "warning: truth and result share no addresses\n";
  }
  std::cout << "phase     tp     fp     fn     precision recall\n";
  for (Phase p : phases) {
    if (!result.has_phase(p))
      std::cerr << "warning: phase " << to_string(p) << " absent from result\n";
    Metrics m = score(truth, result, p);
    char line[128];
    std::snprintf(line, sizeof line, "%-9s %-6llu %-6llu %-6llu %-9s %s\n", to_string(p),
                  (unsigned long long)m.tp, (unsigned long long)m.fp,
                  (unsigned long long)m.fn, fmt4(m.precision).c_str(),
                  fmt4(m.recall).c_str());
    std::cout << line;
  }
  if (attribute)
    for (Phase p : phases)
      for (const auto& a : attribute_errors(truth, result, p, img ? &*img : nullptr))
        std::cout << "attr " << to_string(p) << ' ' << (a.false_positive ? "FP" : "FN") << ' '
                  << format_item(p, a.item) << " cause=" << a.cause << "\n";
  return ok;
}

struct Job {
  std::string name;
  fs::path binary;
  fs::path truth;
};

std::vector<Job> corpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InputError("not a directory: " + dir.string());
  std::vector<Job> jobs;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() == ".gt") continue;
    fs::path gt = e.path();
    gt.replace_extension(".gt");
    if (fs::exists(gt)) jobs.push_back({e.path().stem().string(), e.path(), gt});
  }
  std::sort(jobs.begin(), jobs.end(), [](const Job& a, const Job& b) { return a.name < b.name; });
  return jobs;
}

struct JobOutcome {
  std::vector<ReportRow> rows;
  std::string failure;
};

JobOutcome run_job(const Job& job, const std::string& prof, const StrategyConfig& cfg) {
  JobOutcome out;
  try {
    Record truth = load(job.truth.string());
    Record result = run(job.binary.string(), cfg, nullptr);
    for (Phase p : all_phases())
      if (result.has_phase(p)) out.rows.push_back({prof, job.name, score(truth, result, p)});
  } catch (const std::exception& e) {
    out.failure = prof + " " + job.name + ": " + e.what();
  }
  return out;
}

int cmd_matrix(const std::string& dir, std::vector<std::string> profiles,
               const std::string& out_dir, unsigned jobs_n) {
  auto jobs = corpus(dir);
  if (jobs.empty()) throw InputError("no (binary, .gt) pairs in " + dir);
  if (profiles.empty()) profiles = profile_names();
  std::vector<StrategyConfig> cfgs;
  for (const auto& p : profiles) cfgs.push_back(build_config(p, "", {}));

  std::vector<std::pair<std::size_t, const Job*>> work;
  for (std::size_t i = 0; i < profiles.size(); ++i)
    for (const auto& j : jobs) work.push_back({i, &j});
  std::vector<JobOutcome> outcomes(work.size());
  if (jobs_n == 0) jobs_n = 1;
  for (std::size_t base = 0; base < work.size(); base += jobs_n) {
    std::vector<std::future<JobOutcome>> fut;
    for (std::size_t k = base; k < std::min(work.size(), base + jobs_n); ++k) {
      auto [pi, job] = work[k];
      fut.push_back(std::async(std::launch::async, run_job, std::cref(*job),
                               std::cref(profiles[pi]), std::cref(cfgs[pi])));
    }
    for (std::size_t k = 0; k < fut.size(); ++k) outcomes[base + k] = fut[k].get();
  }

  std::vector<ReportRow> rows;
  std::string failures;
  for (auto& o : outcomes) {
    rows.insert(rows.end(), o.rows.begin(), o.rows.end());
    if (!o.failure.empty()) {
      failures += o.failure + "\n";
      std::cerr << "skipped: " << o.failure << "\n";
    }
  }
  std::string table = emit_report(rows, ReportFormat::table);
  std::cout << table;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    fs::path o(out_dir);
    write_file((o / "report.txt").string(), table);
    write_file((o / "report.csv").string(), emit_report(rows, ReportFormat::csv));
    write_file((o / "ablation.csv").string(), emit_ablation(rows));
    std::ostringstream per;
    per << "profile,binary,phase,tp,fp,fn,precision,recall\n";
    for (const auto& r : rows)
      per << r.profile << ',' << r.binary << ',' << to_string(r.metrics.phase) << ','
          << r.metrics.tp << ',' << r.metrics.fp << ',' << r.metrics.fn << ','
          << fmt4(r.metrics.precision) << ',' << fmt4(r.metrics.recall) << "\n";
    write_file((o / "per_binary.csv").string(), per.str());
    write_file((o / "failures.txt").string(), failures);
  }
  return ok;
}

int cmd_strategies() {
  std::cout << "profiles: " << profile_list() << "\n\n";
  for (const auto& f : flag_catalog()) {
    std::cout << f.key << "  [" << f.values << "]\n"
              << "    " << f.technique << "\n";
    if (!f.tools.empty()) std::cout << "    used by: " << f.tools << "\n";
  }
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"x86 disassembly strategy lab"};
  app.require_subcommand(1);

  std::string binary, prof = "pure", config_file, out;
  std::vector<std::string> sets;
  auto* disasm = app.add_subcommand("disasm", "analyze a binary and write a result file");
  disasm->add_option("binary", binary, "ELF file or flat fixture")->required();
  disasm->add_option("--profile,-p", prof, "named strategy profile");
  disasm->add_option("--set", sets, "override a flag, key=value");
  disasm->add_option("--config", config_file, "file of key = value lines");
  disasm->add_option("-o,--output", out, "result file (default stdout)");

  std::string truth, result;
  std::vector<std::string> phases;
  bool attribute = false;
  std::string eval_binary;
  auto* eval = app.add_subcommand("eval", "score a result against ground truth");
  eval->add_option("truth", truth)->required();
  eval->add_option("result", result)->required();
  eval->add_option("--phases", phases, "subset of phases")->delimiter(',');
  eval->add_flag("--attribute", attribute, "print a cause for every FP/FN");
  eval->add_option("--binary", eval_binary, "binary, enables byte-level cause rules");

  std::string corpus_dir, matrix_out;
  std::vector<std::string> profiles;
  unsigned jobs = 1;
  auto* matrix = app.add_subcommand("matrix", "run profiles over a corpus and report");
  matrix->add_option("corpus", corpus_dir, "directory of binaries with .gt files")->required();
  matrix->add_option("--profiles", profiles, "profiles to run (default all)")->delimiter(',');
  matrix->add_option("-o,--output", matrix_out, "output directory");
  matrix->add_option("-j,--jobs", jobs, "parallel jobs");

  auto* strategies = app.add_subcommand("strategies", "describe profiles and flags");
  std::string what;
  strategies->add_option("what", what)->check(CLI::IsMember({"list"}))->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? ok : usage;
  }

  try {
    if (*disasm) return cmd_disasm(binary, prof, config_file, sets, out);
    if (*eval) return cmd_eval(truth, result, phases, attribute, eval_binary);
    if (*matrix) return cmd_matrix(corpus_dir, profiles, matrix_out, jobs);
    if (*strategies) return cmd_strategies();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return usage;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return input;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return usage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return internal;
  }
  return usage;
}
