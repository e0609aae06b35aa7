#pragma once

// Desk-scale datasets: Gaussian blobs, interleaved spirals, and CSV ingestion.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "duet/rng.hpp"
#include "duet/tensor.hpp"

namespace duet {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DataSource { synthetic_blobs, synthetic_spirals, csv };

inline const char* to_string(DataSource s) {
  switch (s) {
    case DataSource::synthetic_blobs: return "synthetic_blobs";
    case DataSource::synthetic_spirals: return "synthetic_spirals";
    case DataSource::csv: return "csv";
  }
  return "?";
}

inline DataSource parse_data_source(const std::string& s) {
  if (s == "synthetic_blobs" || s == "blobs") return DataSource::synthetic_blobs;
  if (s == "synthetic_spirals" || s == "spirals") return DataSource::synthetic_spirals;
  if (s == "csv") return DataSource::csv;
  throw ContractError("unknown dataset source '" + s + "'");
}

struct DatasetSpec {
  DataSource source = DataSource::synthetic_blobs;
  std::size_t n_classes = 4;
  std::size_t dim = 8;
  std::size_t n_train = 2000;
  std::size_t n_test = 5000;
  double noise = 0.15;
  double separation = 1.0;  // blobs: centers are drawn from [0, separation]^dim
  std::string csv_path;

  void validate() const {
    if (n_classes < 2) throw ContractError("dataset: need at least 2 classes");
    if (dim < 2) throw ContractError("dataset: need at least 2 input dimensions");
    if (source != DataSource::csv && (n_train == 0 || n_test == 0))
      throw ContractError("dataset: train and test sizes must be positive");
    if (noise < 0.0) throw ContractError("dataset: noise must be non-negative");
    if (source == DataSource::csv && csv_path.empty()) throw ContractError("dataset: csv source needs csv_path");
  }
};

struct Dataset {
  Tensor x;                    // [n x dim]
  std::vector<std::size_t> y;  // labels in [0, C)
  std::size_t n_classes = 0;

  std::size_t size() const { return y.size(); }
};

/// Axis-aligned box the generator is allowed to emit into.
struct DataDomain {
  Tensor lo;
  Tensor hi;

  std::size_t dim() const { return lo.size(); }

  static DataDomain of(const Tensor& x) {
    DataDomain d{Tensor({x.cols()}, INFINITY), Tensor({x.cols()}, -INFINITY)};
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) {
        d.lo[c] = std::min(d.lo[c], x(r, c));
        d.hi[c] = std::max(d.hi[c], x(r, c));
      }
    return d;
  }

  /// Mean side length; attack budgets are expressed as fractions of it.
  double mean_range() const {
    double s = 0.0;
    for (std::size_t i = 0; i < dim(); ++i) s += hi[i] - lo[i];
    return s / static_cast<double>(dim());
  }
};

/// Affine [min, max] -> [0, 1] per-feature rescaling fitted on training rows.
struct FeatureScaling {
  Tensor offset;
  Tensor scale;

  Tensor apply(const Tensor& x) const {
    Tensor out = x;
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - offset[c]) * scale[c];
    return out;
  }
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
  std::optional<FeatureScaling> scaling;  // csv only
};

namespace detail {

inline Dataset make_blobs(const DatasetSpec& spec, const Tensor& centers, std::size_t n, Rng& rng) {
  Dataset d{Tensor({n, spec.dim}), std::vector<std::size_t>(n), spec.n_classes};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % spec.n_classes;
    d.y[i] = k;
    for (std::size_t c = 0; c < spec.dim; ++c) d.x(i, c) = centers(k, c) + spec.noise * rng.normal();
  }
  return d;
}

inline Dataset make_spirals(const DatasetSpec& spec, std::size_t n, Rng& rng) {
  Dataset d{Tensor({n, spec.dim}), std::vector<std::size_t>(n), spec.n_classes};
  const double arms = static_cast<double>(spec.n_classes);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % spec.n_classes;
    d.y[i] = k;
    const double t = rng.uniform(0.1, 1.0);
    const double angle = 2.0 * std::numbers::pi * (static_cast<double>(k) / arms + 0.75 * t);
    d.x(i, 0) = 0.5 + 0.5 * t * std::cos(angle) + spec.noise * rng.normal();
    d.x(i, 1) = 0.5 + 0.5 * t * std::sin(angle) + spec.noise * rng.normal();
    for (std::size_t c = 2; c < spec.dim; ++c) d.x(i, c) = 0.5 + spec.noise * rng.normal();
  }
  return d;
}

inline std::vector<std::pair<std::vector<double>, long long>> read_csv_rows(const DatasetSpec& spec) {
  std::ifstream in(spec.csv_path);
  if (!in) throw DataError("cannot open csv file " + spec.csv_path);
  std::vector<std::pair<std::vector<double>, long long>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != spec.dim + 1)
      throw DataError(spec.csv_path + ":" + std::to_string(line_no) + ": expected " + std::to_string(spec.dim + 1) +
                      " fields, found " + std::to_string(fields.size()));
    std::vector<double> feats(spec.dim);
    long long label = 0;
    try {
      for (std::size_t c = 0; c < spec.dim; ++c) {
        std::size_t used = 0;
        feats[c] = std::stod(fields[c], &used);
        if (used != fields[c].size() && fields[c].find_first_not_of(" \t\r", used) != std::string::npos)
          throw std::invalid_argument("trailing characters");
        if (!std::isfinite(feats[c])) throw std::invalid_argument("non-finite");
      }
      std::size_t used = 0;
      label = std::stoll(fields[spec.dim], &used);
      if (fields[spec.dim].find_first_not_of(" \t\r", used) != std::string::npos)
        throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw DataError(spec.csv_path + ":" + std::to_string(line_no) + ": cannot parse row");
    }
    if (label < 0 || label >= static_cast<long long>(spec.n_classes))
      throw DataError(spec.csv_path + ":" + std::to_string(line_no) + ": label " + std::to_string(label) +
                      " outside [0," + std::to_string(spec.n_classes) + ")");
    rows.emplace_back(std::move(feats), label);
  }
  return rows;
}

inline DatasetSplit make_csv(const DatasetSpec& spec, Rng& rng) {
  auto rows = read_csv_rows(spec);
  if (rows.size() < 2) throw DataError(spec.csv_path + ": need at least 2 data rows");
  // Seeded Fisher-Yates so the split is reproducible.
  for (std::size_t i = rows.size() - 1; i > 0; --i) std::swap(rows[i], rows[rng.below(i + 1)]);
  std::size_t n_train = spec.n_train, n_test = spec.n_test;
  if (n_train == 0 && n_test == 0) {
    n_train = std::max<std::size_t>(1, rows.size() * 4 / 5);
    n_test = rows.size() - n_train;
  }
  if (n_train == 0 || n_test == 0 || n_train + n_test > rows.size())
    throw DataError(spec.csv_path + ": requested split " + std::to_string(n_train) + "+" + std::to_string(n_test) +
                    " exceeds " + std::to_string(rows.size()) + " rows");
  auto take = [&](std::size_t begin, std::size_t n) {
    Dataset d{Tensor({n, spec.dim}), std::vector<std::size_t>(n), spec.n_classes};
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < spec.dim; ++c) d.x(i, c) = rows[begin + i].first[c];
      d.y[i] = static_cast<std::size_t>(rows[begin + i].second);
    }
    return d;
  };
  DatasetSplit split{take(0, n_train), take(n_train, n_test), std::nullopt};
  DataDomain box = DataDomain::of(split.train.x);
  FeatureScaling scaling{box.lo, Tensor({spec.dim})};
  for (std::size_t c = 0; c < spec.dim; ++c) {
    const double w = box.hi[c] - box.lo[c];
    scaling.scale[c] = w > 0.0 ? 1.0 / w : 1.0;
  }
  split.train.x = scaling.apply(split.train.x);
  split.test.x = scaling.apply(split.test.x);
  split.scaling = scaling;
  return split;
}

}  // namespace detail

/// Deterministic per seed. Train and test are drawn independently.
inline DatasetSplit make_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng = Rng::substream(seed, "dataset");
  switch (spec.source) {
    case DataSource::synthetic_blobs: {
      Tensor centers = rng.uniform_tensor({spec.n_classes, spec.dim}, 0.0, spec.separation);
      Dataset train = detail::make_blobs(spec, centers, spec.n_train, rng);
      Dataset test = detail::make_blobs(spec, centers, spec.n_test, rng);
      return {std::move(train), std::move(test), std::nullopt};
    }
    case DataSource::synthetic_spirals: {
      Dataset train = detail::make_spirals(spec, spec.n_train, rng);
      Dataset test = detail::make_spirals(spec, spec.n_test, rng);
      return {std::move(train), std::move(test), std::nullopt};
    }
    case DataSource::csv: return detail::make_csv(spec, rng);
  }
  throw ContractError("make_dataset: unknown source");
}

/// Centers used by make_dataset for blobs with the same spec and seed.
inline Tensor blob_centers(const DatasetSpec& spec, std::uint64_t seed) {
  Rng rng = Rng::substream(seed, "dataset");
  return rng.uniform_tensor({spec.n_classes, spec.dim}, 0.0, spec.separation);
}

}  // namespace duet
