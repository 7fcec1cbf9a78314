#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pgn/attacks.hpp"
#include "pgn/objective.hpp"
#include "pgn/random.hpp"

namespace pgn {

struct BallGradientNorm {
  double value = 0.0;         // max |grad J|_2 over the samples
  std::size_t samples = 0;    // M actually evaluated
};

/// Largest |grad J|_2 over an explicit set of points.
template <typename Scalar>
double max_grad_norm_over(const Objective<Scalar>& objective,
                          std::span<const Vector<Scalar>> points) {
  double best = 0.0;
  for (const auto& p : points) best = std::max(best, static_cast<double>(objective.gradient(p).norm()));
  return best;
}

/// Monte-Carlo estimate of max_{x' in B_zeta(x)} |grad J(x')|_2 from M
/// points uniform in the L-infinity ball. zeta = 0 evaluates x once.
template <typename Scalar>
BallGradientNorm max_grad_norm_in_ball(const Objective<Scalar>& objective,
                                       const Vector<Scalar>& x, double zeta, int samples,
                                       Rng& rng) {
  if (!(zeta >= 0.0)) throw UsageError("ball radius must be >= 0");
  if (samples < 1) throw UsageError("need at least one sample");
  if (zeta == 0.0) return {static_cast<double>(objective.gradient(x).norm()), 1};
  BallGradientNorm out{0.0, static_cast<std::size_t>(samples)};
  for (int i = 0; i < samples; ++i) {
    const Vector<Scalar> p = detail::sample_linf_ball(x, zeta, rng);
    out.value = std::max(out.value, static_cast<double>(objective.gradient(p).norm()));
  }
  return out;
}

/// Two-direction loss slice around a point.
struct SurfaceGrid {
  double range = 0.0;  // k1, k2 in [-range, range]
  int resolution = 0;  // G, odd
  Vector<double> r1, r2;
  Matrix<double> values;  // values(i, j) = J(x + k1_i r1 + k2_j r2)
  double center_loss = 0.0;

  /// k_i = range * (2i - (G - 1)) / (G - 1); the middle index is exactly 0.
  double coordinate(int i) const {
    return range * static_cast<double>(2 * i - (resolution - 1)) /
           static_cast<double>(resolution - 1);
  }

  /// Mean |value - center| over the grid.
  double mean_abs_deviation() const { return (values.array() - center_loss).abs().mean(); }
};

/// Seeded Gaussian directions, each scaled to unit L2 norm, and the loss on
/// a G x G grid. Cells are independent; results do not depend on order.
template <typename Scalar>
SurfaceGrid loss_surface(const Objective<Scalar>& objective, const Vector<Scalar>& x,
                         std::uint64_t seed, double range, int resolution) {
  if (resolution < 1 || resolution % 2 == 0) {
    throw UsageError("surface grid resolution must be odd, got " + std::to_string(resolution));
  }
  if (!(range >= 0.0)) throw UsageError("surface range must be >= 0");
  SurfaceGrid grid;
  grid.range = range;
  grid.resolution = resolution;
  Rng rng(mix_seed(seed));
  std::normal_distribution<double> gauss(0.0, 1.0);
  grid.r1.resize(x.size());
  grid.r2.resize(x.size());
  for (Index i = 0; i < x.size(); ++i) grid.r1[i] = gauss(rng);
  for (Index i = 0; i < x.size(); ++i) grid.r2[i] = gauss(rng);
  grid.r1.normalize();
  grid.r2.normalize();
  grid.values.resize(resolution, resolution);
  const Vector<Scalar> d1 = grid.r1.template cast<Scalar>();
  const Vector<Scalar> d2 = grid.r2.template cast<Scalar>();
  for (int i = 0; i < resolution; ++i) {
    const auto k1 = static_cast<Scalar>(resolution == 1 ? 0.0 : grid.coordinate(i));
    for (int j = 0; j < resolution; ++j) {
      const auto k2 = static_cast<Scalar>(resolution == 1 ? 0.0 : grid.coordinate(j));
      const Vector<Scalar> p = x + k1 * d1 + k2 * d2;
      grid.values(i, j) = static_cast<double>(objective.value(p));
    }
  }
  grid.center_loss = static_cast<double>(objective.value(x));
  return grid;
}

/// `k1,k2,loss` header then G^2 rows, row-major (k1 outer), %.9g values.
std::string surface_csv(const SurfaceGrid& grid);

/// Formats a value the way surface_csv does.
std::string format_sig9(double v);

}  // namespace pgn
