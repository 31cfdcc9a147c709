#include "dislab/report.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

namespace dislab {

std::vector<Summary> summarize(const std::vector<ReportRow>& rows) {
  std::vector<std::string> order;
  std::map<std::pair<std::string, Phase>, Summary> acc;
  for (const auto& r : rows) {
    if (std::find(order.begin(), order.end(), r.profile) == order.end())
      order.push_back(r.profile);
    auto& s = acc[{r.profile, r.metrics.phase}];
    s.profile = r.profile;
    s.phase = r.metrics.phase;
    ++s.binaries;
    s.avg_pre += r.metrics.precision;
    s.avg_rec += r.metrics.recall;
    s.min_pre = std::min(s.min_pre, r.metrics.precision);
    s.min_rec = std::min(s.min_rec, r.metrics.recall);
  }
  std::vector<Summary> out;
  for (const auto& p : order)
    for (Phase ph : all_phases()) {
      auto it = acc.find({p, ph});
      if (it == acc.end()) continue;
      Summary s = it->second;
      s.avg_pre /= double(s.binaries);
      s.avg_rec /= double(s.binaries);
      out.push_back(s);
    }
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

}  // namespace

std::string emit_report(const std::vector<ReportRow>& rows, ReportFormat format) {
  auto sums = summarize(rows);
  std::ostringstream os;
  if (format == ReportFormat::csv) {
    os << "profile,phase,avg_pre,avg_rec,min_pre,min_rec\n";
    for (const auto& s : sums)
      os << s.profile << ',' << to_string(s.phase) << ',' << fmt(s.avg_pre) << ','
         << fmt(s.avg_rec) << ',' << fmt(s.min_pre) << ',' << fmt(s.min_rec) << "\n";
    return os.str();
  }
  os << pad("profile", 12) << pad("phase", 10) << pad("n", 5) << pad("avg_pre", 9)
     << pad("avg_rec", 9) << pad("min_pre", 9) << "min_rec\n";
  for (const auto& s : sums)
    os << pad(s.profile, 12) << pad(to_string(s.phase), 10)
       << pad(std::to_string(s.binaries), 5) << pad(fmt(s.avg_pre), 9)
       << pad(fmt(s.avg_rec), 9) << pad(fmt(s.min_pre), 9) << fmt(s.min_rec) << "\n";
  return os.str();
}

std::string emit_ablation(const std::vector<ReportRow>& rows, const std::string& baseline) {
  auto sums = summarize(rows);
  std::map<Phase, const Summary*> base;
  for (const auto& s : sums)
    if (s.profile == baseline) base[s.phase] = &s;
  std::ostringstream os;
  os << "profile,phase,avg_pre,avg_rec," << baseline << "_pre," << baseline
     << "_rec,delta_pre,delta_rec\n";
  for (const auto& s : sums) {
    if (s.profile == baseline) continue;
    auto b = base.find(s.phase);
    if (b == base.end()) continue;
    os << s.profile << ',' << to_string(s.phase) << ',' << fmt(s.avg_pre) << ','
       << fmt(s.avg_rec) << ',' << fmt(b->second->avg_pre) << ',' << fmt(b->second->avg_rec)
       << ',' << fmt(s.avg_pre - b->second->avg_pre) << ','
       << fmt(s.avg_rec - b->second->avg_rec) << "\n";
  }
  return os.str();
}

}  // namespace dislab
