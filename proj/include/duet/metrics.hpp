#pragma once

// metrics.csv schema, one row per evaluation point:
//
//   epoch,queries,agreement_s1,agreement_s2,agreement_ensemble,
//   grad_fidelity_ds,grad_fidelity_fd,class_hist_0,...,class_hist_{C-1},tv_from_uniform
//
// Floats are written with 17 significant digits; a metric that does not apply
// to a run (e.g. grad_fidelity_ds for a single-student run) is written as nan.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "duet/tensor.hpp"

namespace duet {

struct MetricsRow {
  std::size_t epoch = 0;
  std::uint64_t queries = 0;
  double agreement_s1 = 0.0;
  double agreement_s2 = 0.0;
  double agreement_ensemble = 0.0;
  double grad_fidelity_ds = std::numeric_limits<double>::quiet_NaN();
  double grad_fidelity_fd = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> class_histogram;
  double tv_from_uniform = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline std::string csv_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_csv_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("bad number '" + s + "'");
  return v;
}

}  // namespace detail

inline std::string metrics_header(std::size_t n_classes) {
  std::string h = "epoch,queries,agreement_s1,agreement_s2,agreement_ensemble,grad_fidelity_ds,grad_fidelity_fd";
  for (std::size_t c = 0; c < n_classes; ++c) h += ",class_hist_" + std::to_string(c);
  return h + ",tv_from_uniform";
}

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows, std::size_t n_classes) {
  os << metrics_header(n_classes) << '\n';
  for (const auto& r : rows) {
    if (r.class_histogram.size() != n_classes)
      throw DimensionError("write_metrics_csv: histogram width " + std::to_string(r.class_histogram.size()) +
                           " != " + std::to_string(n_classes));
    os << r.epoch << ',' << r.queries << ',' << detail::csv_double(r.agreement_s1) << ','
       << detail::csv_double(r.agreement_s2) << ',' << detail::csv_double(r.agreement_ensemble) << ','
       << detail::csv_double(r.grad_fidelity_ds) << ',' << detail::csv_double(r.grad_fidelity_fd);
    for (double h : r.class_histogram) os << ',' << detail::csv_double(h);
    os << ',' << detail::csv_double(r.tv_from_uniform) << '\n';
  }
}

/// Parses a metrics.csv stream; the class count is taken from the header.
inline std::vector<MetricsRow> read_metrics_csv(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw std::runtime_error("metrics.csv: empty file");
  std::size_t n_classes = 0;
  while (header.find("class_hist_" + std::to_string(n_classes) + ",") != std::string::npos) ++n_classes;
  if (header != metrics_header(n_classes)) throw std::runtime_error("metrics.csv: unexpected header: " + header);
  std::vector<MetricsRow> rows;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) f.push_back(tok);
    if (f.size() != 8 + n_classes)
      throw std::runtime_error("metrics.csv:" + std::to_string(line_no) + ": expected " +
                               std::to_string(8 + n_classes) + " fields");
    try {
      MetricsRow r;
      r.epoch = std::stoull(f[0]);
      r.queries = std::stoull(f[1]);
      r.agreement_s1 = detail::parse_csv_double(f[2]);
      r.agreement_s2 = detail::parse_csv_double(f[3]);
      r.agreement_ensemble = detail::parse_csv_double(f[4]);
      r.grad_fidelity_ds = detail::parse_csv_double(f[5]);
      r.grad_fidelity_fd = detail::parse_csv_double(f[6]);
      for (std::size_t c = 0; c < n_classes; ++c) r.class_histogram.push_back(detail::parse_csv_double(f[7 + c]));
      r.tv_from_uniform = detail::parse_csv_double(f[7 + n_classes]);
      rows.push_back(std::move(r));
    } catch (const std::invalid_argument&) {
      throw std::runtime_error("metrics.csv:" + std::to_string(line_no) + ": cannot parse row");
    }
  }
  return rows;
}

}  // namespace duet
