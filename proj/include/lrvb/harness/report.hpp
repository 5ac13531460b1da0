#ifndef LRVB_HARNESS_REPORT_HPP
#define LRVB_HARNESS_REPORT_HPP

// Summaries of the results and leverage CSVs: sd ratios against MH per
// parameter group, leverage agreement, and timing ratios, each checked
// against configurable thresholds.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "lrvb/harness/experiment.hpp"

namespace lrvb::harness {

class CsvParseError : public std::runtime_error {
 public:
  CsvParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct ResultRow {
  std::uint64_t sim_id = 0;
  std::string method;
  std::string group;  // logpi, mu or logtau
  int component = 0;  // 1-based
  std::optional<double> point_estimate, sd_estimate, mc_se, timing_ms;
  std::string error;
};

struct LeverageRow {
  long n = 0;
  double x_star = 0;
  int k = 0;
  double responsibility = 0;
  double lrvb_score = 0;
  std::optional<double> perturbation_score;
  double lrvb_ms = 0;
  double perturb_ms = 0;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::optional<double> parse_optional(const std::string& s, std::size_t line,
                                            const char* column) {
  if (s.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::logic_error&) {
  }
  throw CsvParseError(line, std::string("column ") + column + ": '" + s + "' is not a number");
}

inline double parse_required(const std::string& s, std::size_t line, const char* column) {
  const auto v = parse_optional(s, line, column);
  if (!v) throw CsvParseError(line, std::string("column ") + column + " is empty");
  return *v;
}

inline long parse_integer(const std::string& s, std::size_t line, const char* column) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used == s.size() && v >= 0) return v;
  } catch (const std::logic_error&) {
  }
  throw CsvParseError(line, std::string("column ") + column + ": '" + s +
                                "' is not a nonnegative integer");
}

/// Reads the header and the data lines; returns (line number, fields).
inline std::vector<std::pair<std::size_t, std::vector<std::string>>> read_table(
    std::istream& in, const std::string& header) {
  std::string line;
  std::size_t number = 0;
  if (!std::getline(in, line)) throw CsvParseError(1, "empty input");
  ++number;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) throw CsvParseError(1, "unexpected header '" + line + "'");
  const std::size_t width = split_csv_line(header).size();
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != width) {
      throw CsvParseError(number, "expected " + std::to_string(width) + " fields, found " +
                                      std::to_string(fields.size()));
    }
    rows.emplace_back(number, std::move(fields));
  }
  if (rows.empty()) throw CsvParseError(number, "no data rows");
  return rows;
}

}  // namespace detail

inline std::vector<ResultRow> parse_results_csv(std::istream& in) {
  std::vector<ResultRow> out;
  for (auto& [line, f] : detail::read_table(in, kResultsHeader)) {
    ResultRow r;
    r.sim_id = static_cast<std::uint64_t>(detail::parse_integer(f[0], line, "sim_id"));
    r.method = f[1];
    if (r.method != "mfvb" && r.method != "lrvb" && r.method != "mh") {
      throw CsvParseError(line, "unknown method '" + r.method + "'");
    }
    const auto us = f[2].rfind('_');
    if (us == std::string::npos) throw CsvParseError(line, "bad parameter '" + f[2] + "'");
    r.group = f[2].substr(0, us);
    if (r.group != "logpi" && r.group != "mu" && r.group != "logtau") {
      throw CsvParseError(line, "bad parameter '" + f[2] + "'");
    }
    r.component = static_cast<int>(detail::parse_integer(f[2].substr(us + 1), line, "parameter"));
    r.point_estimate = detail::parse_optional(f[3], line, "point_estimate");
    r.sd_estimate = detail::parse_optional(f[4], line, "sd_estimate");
    r.mc_se = detail::parse_optional(f[5], line, "mc_se");
    r.timing_ms = detail::parse_optional(f[6], line, "timing_ms");
    r.error = f[7];
    if (r.error.empty() && (!r.point_estimate || !r.sd_estimate)) {
      throw CsvParseError(line, "estimate missing on a row without an error");
    }
    if (r.sd_estimate && !(*r.sd_estimate >= 0)) {
      throw CsvParseError(line, "negative sd_estimate");
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<LeverageRow> parse_leverage_csv(std::istream& in) {
  std::vector<LeverageRow> out;
  for (auto& [line, f] : detail::read_table(in, kLeverageHeader)) {
    LeverageRow r;
    r.n = detail::parse_integer(f[0], line, "n");
    r.x_star = detail::parse_required(f[1], line, "x_star");
    r.k = static_cast<int>(detail::parse_integer(f[2], line, "k"));
    r.responsibility = detail::parse_required(f[3], line, "responsibility");
    r.lrvb_score = detail::parse_required(f[4], line, "lrvb_score");
    r.perturbation_score = detail::parse_optional(f[5], line, "perturbation_score");
    r.lrvb_ms = detail::parse_required(f[6], line, "lrvb_ms");
    r.perturb_ms = detail::parse_required(f[7], line, "perturb_ms");
    out.push_back(r);
  }
  return out;
}

struct Thresholds {
  double lrvb_ratio_low = 0.9;
  double lrvb_ratio_high = 1.1;
  double mfvb_below_one_fraction = 0.9;
  double leverage_correlation = 0.99;
  double leverage_relative_error = 0.05;
  double leverage_large_score = 0.1;  // fraction of the largest |score|
  double leverage_speedup = 10.0;
};

struct Quartiles {
  double q25 = 0, median = 0, q75 = 0;
  std::size_t count = 0;
};

/// Linearly interpolated quantiles of a nonempty sample.
inline Quartiles quartiles(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("quartiles of an empty sample");
  std::sort(v.begin(), v.end());
  const auto at = [&](double p) {
    const double h = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return {at(0.25), at(0.5), at(0.75), v.size()};
}

struct GroupSummary {
  std::string group;
  Quartiles lrvb_mh, mfvb_mh;
};

struct ResultsSummary {
  std::size_t sims_total = 0;
  std::size_t sims_used = 0;
  std::vector<GroupSummary> groups;
  double mfvb_below_one = 0;  // fraction of (sim, coordinate) cells
  std::optional<Quartiles> mh_over_lrvb_time;
};

struct LeverageSummary {
  std::size_t pairs = 0;
  double correlation = 0;
  double max_relative_error = 0;  // over scores above the large-score cut
  std::size_t large_scores = 0;
  double speedup = 0;  // total perturbation time / linear-response time
};

struct Check {
  std::string name;
  double value = 0;
  bool pass = false;
};

/// Sims with an error on any row are excluded from every aggregate.
inline ResultsSummary summarize_results(const std::vector<ResultRow>& rows) {
  std::map<std::uint64_t, bool> sim_ok;
  for (const auto& r : rows) {
    auto [it, fresh] = sim_ok.emplace(r.sim_id, true);
    if (!r.error.empty()) it->second = false;
  }
  using Key = std::tuple<std::uint64_t, std::string, int>;
  std::map<Key, std::map<std::string, const ResultRow*>> cells;
  std::map<std::uint64_t, std::map<std::string, double>> times;
  for (const auto& r : rows) {
    if (!sim_ok[r.sim_id]) continue;
    cells[{r.sim_id, r.group, r.component}][r.method] = &r;
    if (r.timing_ms) times[r.sim_id][r.method] = *r.timing_ms;
  }
  ResultsSummary s;
  s.sims_total = sim_ok.size();
  for (const auto& [id, ok] : sim_ok) s.sims_used += ok ? 1 : 0;
  if (s.sims_used == 0) throw std::runtime_error("no simulation finished without errors");

  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> ratios;
  std::size_t below = 0, total = 0;
  for (const auto& [key, methods] : cells) {
    if (methods.size() != 3) {
      throw std::runtime_error("sim " + std::to_string(std::get<0>(key)) + " parameter " +
                               std::get<1>(key) + "_" + std::to_string(std::get<2>(key)) +
                               " lacks one of the three methods");
    }
    const double mh_sd = *methods.at("mh")->sd_estimate;
    const double lrvb = *methods.at("lrvb")->sd_estimate / mh_sd;
    const double mfvb = *methods.at("mfvb")->sd_estimate / mh_sd;
    auto& [l, m] = ratios[std::get<1>(key)];
    l.push_back(lrvb);
    m.push_back(mfvb);
    below += mfvb < 1.0 ? 1 : 0;
    ++total;
  }
  for (const char* g : {"logpi", "mu", "logtau"}) {
    if (!ratios.count(g)) continue;
    s.groups.push_back({g, quartiles(ratios[g].first), quartiles(ratios[g].second)});
  }
  s.mfvb_below_one = static_cast<double>(below) / static_cast<double>(total);

  std::vector<double> time_ratio;
  for (const auto& [id, t] : times) {
    if (t.count("mh") && t.count("lrvb") && t.at("lrvb") > 0) {
      time_ratio.push_back(t.at("mh") / t.at("lrvb"));
    }
  }
  if (!time_ratio.empty()) s.mh_over_lrvb_time = quartiles(time_ratio);
  return s;
}

inline LeverageSummary summarize_leverage(const std::vector<LeverageRow>& rows,
                                          const Thresholds& th = {}) {
  LeverageSummary s;
  std::vector<std::pair<double, double>> pairs;
  std::map<long, double> perturb_ms;
  double lrvb_ms = 0;
  for (const auto& r : rows) {
    perturb_ms[r.n] = r.perturb_ms;
    lrvb_ms = std::max(lrvb_ms, r.lrvb_ms);
    if (r.perturbation_score) pairs.emplace_back(r.lrvb_score, *r.perturbation_score);
  }
  if (pairs.size() < 2) throw std::runtime_error("fewer than two leverage pairs");
  s.pairs = pairs.size();
  double ma = 0, mb = 0;
  for (const auto& [a, b] : pairs) ma += a, mb += b;
  ma /= static_cast<double>(pairs.size());
  mb /= static_cast<double>(pairs.size());
  double sab = 0, saa = 0, sbb = 0, top = 0;
  for (const auto& [a, b] : pairs) {
    sab += (a - ma) * (b - mb);
    saa += (a - ma) * (a - ma);
    sbb += (b - mb) * (b - mb);
    top = std::max(top, std::abs(b));
  }
  s.correlation = sab / std::sqrt(saa * sbb);
  for (const auto& [a, b] : pairs) {
    if (std::abs(b) <= th.leverage_large_score * top) continue;
    ++s.large_scores;
    s.max_relative_error = std::max(s.max_relative_error, std::abs(a - b) / std::abs(b));
  }
  double total = 0;
  for (const auto& [n, ms] : perturb_ms) total += ms;
  s.speedup = lrvb_ms > 0 ? total / lrvb_ms : std::numeric_limits<double>::infinity();
  return s;
}

inline std::vector<Check> results_checks(const ResultsSummary& s, const Thresholds& th) {
  std::vector<Check> out;
  for (const auto& g : s.groups) {
    const double m = g.lrvb_mh.median;
    out.push_back({g.group + " median lrvb/mh in [" + fmt(th.lrvb_ratio_low) + ", " +
                       fmt(th.lrvb_ratio_high) + "]",
                   m, m >= th.lrvb_ratio_low && m <= th.lrvb_ratio_high});
  }
  for (const auto& g : s.groups) {
    if (g.group == "mu") continue;
    out.push_back({g.group + " median mfvb/mh below median lrvb/mh", g.mfvb_mh.median,
                   g.mfvb_mh.median < g.lrvb_mh.median});
  }
  out.push_back({"fraction of cells with mfvb/mh < 1 >= " + fmt(th.mfvb_below_one_fraction),
                 s.mfvb_below_one, s.mfvb_below_one >= th.mfvb_below_one_fraction});
  return out;
}

inline std::vector<Check> leverage_checks(const LeverageSummary& s, const Thresholds& th) {
  return {
      {"leverage correlation > " + fmt(th.leverage_correlation), s.correlation,
       s.correlation > th.leverage_correlation},
      {"leverage max relative error < " + fmt(th.leverage_relative_error), s.max_relative_error,
       s.max_relative_error < th.leverage_relative_error},
      {"leverage speedup >= " + fmt(th.leverage_speedup), s.speedup,
       s.speedup >= th.leverage_speedup},
  };
}

struct Report {
  std::optional<ResultsSummary> results;
  std::optional<LeverageSummary> leverage;
  std::vector<Check> checks;
  bool pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
  }
};

/// Dispatches on the header line: either a results or a leverage CSV.
inline void add_to_report(Report& report, std::istream& in, const Thresholds& th) {
  std::string header;
  if (!std::getline(in, header)) throw CsvParseError(1, "empty input");
  if (!header.empty() && header.back() == '\r') header.pop_back();
  std::stringstream rest;
  rest << header << '\n' << in.rdbuf();
  if (header == kResultsHeader) {
    report.results = summarize_results(parse_results_csv(rest));
    for (auto& c : results_checks(*report.results, th)) report.checks.push_back(std::move(c));
  } else if (header == kLeverageHeader) {
    report.leverage = summarize_leverage(parse_leverage_csv(rest), th);
    for (auto& c : leverage_checks(*report.leverage, th)) report.checks.push_back(std::move(c));
  } else {
    throw CsvParseError(1, "unrecognized header '" + header + "'");
  }
}

inline void write_text_summary(const Report& r, std::ostream& out) {
  if (r.results) {
    const auto& s = *r.results;
    out << "sd ratios against mh (" << s.sims_used << " of " << s.sims_total << " sims used)\n";
    out << "group   ratio     cells  q25           median        q75\n";
    char buf[160];
    for (const auto& g : s.groups) {
      for (const auto& [name, q] : {std::pair{"lrvb/mh", g.lrvb_mh}, {"mfvb/mh", g.mfvb_mh}}) {
        std::snprintf(buf, sizeof buf, "%-7s %-9s %5zu  %-12.6f  %-12.6f  %.6f\n",
                      g.group.c_str(), name, q.count, q.q25, q.median, q.q75);
        out << buf;
      }
    }
    out << "cells with mfvb/mh < 1: " << fmt(s.mfvb_below_one) << '\n';
    if (s.mh_over_lrvb_time) {
      out << "median time ratio mh/lrvb: " << fmt(s.mh_over_lrvb_time->median) << '\n';
    }
  }
  if (r.leverage) {
    const auto& s = *r.leverage;
    out << "leverage: " << s.pairs << " pairs, correlation " << fmt(s.correlation)
        << ", max relative error " << fmt(s.max_relative_error) << " over " << s.large_scores
        << " large scores, perturbation/lrvb time " << fmt(s.speedup) << '\n';
  }
  for (const auto& c : r.checks) {
    out << (c.pass ? "PASS " : "FAIL ") << c.name << " (" << fmt(c.value) << ")\n";
  }
}

/// Long-format CSV: one statistic per row.
inline void write_csv_summary(const Report& r, std::ostream& out) {
  out << "section,name,value\n";
  if (r.results) {
    const auto& s = *r.results;
    out << "results,sims_total," << s.sims_total << '\n';
    out << "results,sims_used," << s.sims_used << '\n';
    for (const auto& g : s.groups) {
      for (const auto& [name, q] : {std::pair{"lrvb_mh", g.lrvb_mh}, {"mfvb_mh", g.mfvb_mh}}) {
        const std::string p = g.group + "." + name + ".";
        out << "results," << p << "q25," << fmt(q.q25) << '\n';
        out << "results," << p << "median," << fmt(q.median) << '\n';
        out << "results," << p << "q75," << fmt(q.q75) << '\n';
      }
    }
    out << "results,mfvb_below_one," << fmt(s.mfvb_below_one) << '\n';
    if (s.mh_over_lrvb_time) {
      out << "results,time_mh_over_lrvb.median," << fmt(s.mh_over_lrvb_time->median) << '\n';
    }
  }
  if (r.leverage) {
    const auto& s = *r.leverage;
    out << "leverage,pairs," << s.pairs << '\n';
    out << "leverage,correlation," << fmt(s.correlation) << '\n';
    out << "leverage,max_relative_error," << fmt(s.max_relative_error) << '\n';
    out << "leverage,large_scores," << s.large_scores << '\n';
    out << "leverage,speedup," << fmt(s.speedup) << '\n';
  }
  for (const auto& c : r.checks) {
    out << "check," << sanitize(c.name) << ',' << (c.pass ? "pass" : "fail") << '\n';
  }
}

}  // namespace lrvb::harness

#endif  // LRVB_HARNESS_REPORT_HPP
