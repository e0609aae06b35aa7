#pragma once

// Zeroth-order (forward-differences) gradient estimation for per-sample losses
// of a black box. Each direction costs two evaluations of the whole batch.

#include <cmath>
#include <functional>

#include "duet/rng.hpp"
#include "duet/tensor.hpp"

namespace duet {

/// Maps a batch [b x d] to per-sample losses [b x 1].
using SampleLoss = std::function<Tensor(const Tensor&)>;

/// One random unit direction per row, drawn from a normalized Gaussian.
inline Tensor random_unit_directions(std::size_t rows, std::size_t dim, Rng& rng) {
  Tensor u = rng.normal_tensor({rows, dim});
  for (std::size_t r = 0; r < rows; ++r) {
    double n = 0.0;
    for (double v : u.row(r)) n += v * v;
    n = std::sqrt(n);
    for (double& v : u.row(r)) v /= n;
  }
  return u;
}

/// Central-difference directional derivative per row:
/// (L(x + eps*u) - L(x - eps*u)) / (2 eps).
inline Tensor fd_directional(const SampleLoss& loss, const Tensor& x, const Tensor& u, double eps) {
  if (x.shape() != u.shape()) throw DimensionError("fd_directional: direction shape " + shape_str(u.shape()) +
                                                   " does not match input " + shape_str(x.shape()));
  if (!(eps > 0.0)) throw ContractError("fd_directional: step must be positive");
  Tensor plus = x, minus = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    plus[i] += eps * u[i];
    minus[i] -= eps * u[i];
  }
  const Tensor up = loss(plus);
  const Tensor down = loss(minus);
  if (up.size() != x.rows() || down.size() != x.rows())
    throw DimensionError("fd_directional: loss must return one value per row");
  Tensor out({x.rows(), 1});
  for (std::size_t r = 0; r < x.rows(); ++r) out(r, 0) = (up[r] - down[r]) / (2.0 * eps);
  return out;
}

/// Estimate of each row's input gradient from `directions` random directions:
/// g = (d / m) * sum_j D_j L(x) u_j. The d/m factor makes E[g] the true
/// gradient for smooth L, since E[u uᵀ] = I/d for unit Gaussian directions.
inline Tensor fd_gradient(const SampleLoss& loss, const Tensor& x, std::size_t directions, double eps, Rng& rng) {
  if (directions == 0) throw ContractError("fd_gradient: need at least one direction");
  const std::size_t b = x.rows(), d = x.cols();
  Tensor g({b, d});
  const double factor = static_cast<double>(d) / static_cast<double>(directions);
  for (std::size_t j = 0; j < directions; ++j) {
    const Tensor u = random_unit_directions(b, d, rng);
    const Tensor slope = fd_directional(loss, x, u, eps);
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t c = 0; c < d; ++c) g(r, c) += factor * slope(r, 0) * u(r, c);
  }
  return g;
}

}  // namespace duet
