#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <type_traits>

#include "pgn/objective.hpp"

namespace pgn {

/// How the predicted point normalizes the sampled gradient. The attack path
/// divides by the L1 norm; the HVP derivation uses a unit-L2 direction.
enum class DirectionNorm { L1, L2 };

template <typename Scalar>
Scalar norm_of(const Vector<Scalar>& v, DirectionNorm norm) {
  return norm == DirectionNorm::L1 ? v.template lpNorm<1>() : v.norm();
}

struct FdConfig {
  double fd_step = 1.6 / 255.0;  // equals the default attack step eps / T
  DirectionNorm norm = DirectionNorm::L1;

  void validate() const {
    if (!(fd_step > 0.0) || !std::isfinite(fd_step)) {
      throw UsageError("finite-difference step must be > 0, got " + std::to_string(fd_step));
    }
  }
};

template <typename Scalar>
struct HvpResult {
  Vector<Scalar> product;
  std::size_t gradient_evals = 0;
};

template <typename Scalar>
struct HessianResult {
  Matrix<Scalar> hessian;
  std::size_t gradient_evals = 0;
};

namespace detail {

template <typename Scalar>
void check_direction(const Objective<Scalar>& objective, const Vector<Scalar>& x,
                     const Vector<Scalar>& v) {
  if (x.size() != objective.dimension() || v.size() != x.size()) {
    throw DimensionError("hvp: point has " + std::to_string(x.size()) + " values, direction " +
                         std::to_string(v.size()) + ", objective " +
                         std::to_string(objective.dimension()));
  }
  if (!v.allFinite()) throw UsageError("hvp: direction must be finite");
}

/// Forward difference reusing an already computed gradient at x.
template <typename Scalar>
Vector<Scalar> forward_difference(const Objective<Scalar>& objective, const Vector<Scalar>& x,
                                  const Vector<Scalar>& grad_at_x, const Vector<Scalar>& v,
                                  Scalar step) {
  const Vector<Scalar> shifted = x + step * v;
  return (objective.gradient(shifted) - grad_at_x) / step;
}

}  // namespace detail

/// H(x) v ~= (grad J(x + a v) - grad J(x)) / a with a = cfg.fd_step.
/// Exactly two gradient evaluations.
template <typename Scalar>
HvpResult<Scalar> fdm_hvp(const Objective<Scalar>& objective, const Vector<Scalar>& x,
                          const Vector<Scalar>& v, const FdConfig& cfg) {
  cfg.validate();
  detail::check_direction(objective, x, v);
  const Vector<Scalar> g0 = objective.gradient(x);
  return {detail::forward_difference(objective, x, g0, v, static_cast<Scalar>(cfg.fd_step)), 2};
}

/// Central-difference reference (grad J(x + h v) - grad J(x - h v)) / 2h,
/// O(h^2) accurate. 64-bit only.
template <typename Scalar>
HvpResult<Scalar> exact_hvp_oracle(const Objective<Scalar>& objective, const Vector<Scalar>& x,
                                   const Vector<Scalar>& v, double h = 1e-4) {
  static_assert(std::is_same_v<Scalar, double>, "the HVP oracle runs in 64-bit precision");
  if (!(h > 0.0)) throw UsageError("oracle step must be > 0");
  detail::check_direction(objective, x, v);
  const Vector<Scalar> plus = x + h * v;
  const Vector<Scalar> minus = x - h * v;
  return {(objective.gradient(plus) - objective.gradient(minus)) / (2.0 * h), 2};
}

/// Dense Hessian by central differences of gradients, one column per input
/// coordinate: 2n gradient evaluations. 64-bit only; refuses n > cap.
template <typename Scalar>
HessianResult<Scalar> full_hessian(const Objective<Scalar>& objective, const Vector<Scalar>& x,
                                   double h = 1e-4, Index cap = 1024) {
  static_assert(std::is_same_v<Scalar, double>, "the full Hessian runs in 64-bit precision");
  const Index n = objective.dimension();
  if (n > cap) {
    throw UsageError("full_hessian: input dimension " + std::to_string(n) + " exceeds cap " +
                     std::to_string(cap));
  }
  if (!(h > 0.0)) throw UsageError("full_hessian: step must be > 0");
  if (x.size() != n) throw DimensionError("full_hessian: point size mismatch");
  HessianResult<Scalar> out{Matrix<Scalar>(n, n), 0};
  Vector<Scalar> probe = x;
  for (Index j = 0; j < n; ++j) {
    probe[j] = x[j] + h;
    const Vector<Scalar> plus = objective.gradient(probe);
    probe[j] = x[j] - h;
    const Vector<Scalar> minus = objective.gradient(probe);
    probe[j] = x[j];
    out.hessian.col(j) = (plus - minus) / (2.0 * h);
    out.gradient_evals += 2;
  }
  return out;
}

template <typename Scalar>
struct PgnGradient {
  Vector<Scalar> gradient;   // (1 - delta) g' + delta g*
  Vector<Scalar> sampled;    // g'  = grad J(x')
  Vector<Scalar> predicted;  // g*  = grad J(x*)
  Scalar sampled_loss{};
  bool degenerate = false;   // g' == 0: gradient is g' and x* is not formed
  std::size_t gradient_evals = 0;
};

/// Interpolated gradient at a sampled point x': take g' = grad J(x'), step
/// against it to x* = x' - a g' / |g'|, and blend the two gradients with
/// balance delta. Equivalent to penalizing |grad J| with lambda = delta * a.
template <typename Scalar>
PgnGradient<Scalar> pgn_gradient(const Objective<Scalar>& objective, const Vector<Scalar>& x,
                                 double delta, const FdConfig& cfg) {
  if (!(delta >= 0.0 && delta <= 1.0)) {
    throw UsageError("balanced coefficient must lie in [0, 1], got " + std::to_string(delta));
  }
  cfg.validate();
  PgnGradient<Scalar> out;
  auto sampled = objective.evaluate(x);
  out.sampled_loss = sampled.value;
  out.sampled = std::move(sampled.gradient);
  out.gradient_evals = 1;
  const Scalar norm = norm_of(out.sampled, cfg.norm);
  if (norm == Scalar(0)) {
    out.degenerate = true;
    out.gradient = out.sampled;
    out.predicted = out.sampled;
    return out;
  }
  const Vector<Scalar> predicted_point =
      x - (static_cast<Scalar>(cfg.fd_step) / norm) * out.sampled;
  out.predicted = objective.gradient(predicted_point);
  out.gradient_evals = 2;
  if (delta == 0.0) {
    out.gradient = out.sampled;
  } else if (delta == 1.0) {
    out.gradient = out.predicted;
  } else {
    out.gradient = static_cast<Scalar>(1.0 - delta) * out.sampled +
                   static_cast<Scalar>(delta) * out.predicted;
  }
  return out;
}

template <typename Scalar>
struct RegGradient {
  Vector<Scalar> gradient;
  bool degenerate = false;
  std::size_t gradient_evals = 0;
};

/// grad J(x_adv) - lambda * H(x') g'/|g'|_2 with the product taken by a
/// forward difference of step cfg.fd_step. When x_adv and x' coincide the
/// gradient at x' is reused (two evaluations in total).
template <typename Scalar>
RegGradient<Scalar> reg_objective_gradient(const Objective<Scalar>& objective,
                                           const Vector<Scalar>& x_adv,
                                           const Vector<Scalar>& x_sample, double lambda,
                                           const FdConfig& cfg) {
  if (!(lambda >= 0.0)) throw UsageError("penalty coefficient must be >= 0");
  cfg.validate();
  RegGradient<Scalar> out;
  const bool same_point = bit_equal(x_adv, x_sample);
  if (lambda == 0.0) {
    out.gradient = objective.gradient(x_adv);
    out.gradient_evals = 1;
    return out;
  }
  const Vector<Scalar> g_sample = objective.gradient(x_sample);
  out.gradient = same_point ? g_sample : objective.gradient(x_adv);
  out.gradient_evals = same_point ? 1 : 2;
  const Scalar norm = g_sample.norm();
  if (norm == Scalar(0)) {
    out.degenerate = true;
    return out;
  }
  const Vector<Scalar> v = g_sample / norm;
  out.gradient -= static_cast<Scalar>(lambda) *
                  detail::forward_difference(objective, x_sample, g_sample, v,
                                             static_cast<Scalar>(cfg.fd_step));
  out.gradient_evals += 1;
  return out;
}

/// Same update as reg_objective_gradient but with the Hessian formed
/// explicitly by full_hessian at x' (2n + 1 evaluations when x_adv == x').
template <typename Scalar>
RegGradient<Scalar> reg_objective_gradient_hessian(const Objective<Scalar>& objective,
                                                   const Vector<Scalar>& x_adv,
                                                   const Vector<Scalar>& x_sample,
                                                   double lambda, double h = 1e-4) {
  if (!(lambda >= 0.0)) throw UsageError("penalty coefficient must be >= 0");
  RegGradient<Scalar> out;
  const bool same_point = bit_equal(x_adv, x_sample);
  const Vector<Scalar> g_sample = objective.gradient(x_sample);
  out.gradient = same_point ? g_sample : objective.gradient(x_adv);
  out.gradient_evals = same_point ? 1 : 2;
  const Scalar norm = g_sample.norm();
  if (lambda == 0.0) return out;
  if (norm == Scalar(0)) {
    out.degenerate = true;
    return out;
  }
  const auto hess = full_hessian(objective, x_sample, h);
  out.gradient -= static_cast<Scalar>(lambda) * (hess.hessian * (g_sample / norm));
  out.gradient_evals += hess.gradient_evals;
  return out;
}

}  // namespace pgn
