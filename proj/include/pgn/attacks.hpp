#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pgn/hvp.hpp"
#include "pgn/objective.hpp"
#include "pgn/random.hpp"
#include "pgn/transforms.hpp"

namespace pgn {

/// L-infinity perturbation budget. The step size is always eps / steps.
struct AttackBudget {
  double eps = 16.0 / 255.0;
  int steps = 10;
  double decay = 1.0;  // momentum factor mu
  double clamp_min = 0.0;
  double clamp_max = 1.0;

  double step_size() const { return steps >= 1 ? eps / steps : 0.0; }

  void validate() const {
    if (!(eps >= 0.0) || !std::isfinite(eps)) throw UsageError("eps must be >= 0");
    if (steps < 1) throw UsageError("steps must be >= 1");
    if (!(decay >= 0.0)) throw UsageError("momentum decay must be >= 0");
    if (!(clamp_min < clamp_max)) throw UsageError("clamp range must be non-empty");
  }

  friend bool operator==(const AttackBudget&, const AttackBudget&) = default;
};

struct PgnParams {
  double delta = 0.5;        // balanced coefficient
  double zeta_factor = 3.0;  // sampling radius zeta = zeta_factor * eps
  int samples = 20;          // N

  double zeta(const AttackBudget& b) const { return zeta_factor * b.eps; }
  /// Penalty coefficient implied by the balanced coefficient.
  double lambda(const AttackBudget& b) const { return delta * b.step_size(); }

  void validate() const {
    if (!(delta >= 0.0 && delta <= 1.0)) throw UsageError("delta must lie in [0, 1]");
    if (!(zeta_factor >= 0.0)) throw UsageError("zeta factor must be >= 0");
    if (samples < 1) throw UsageError("samples must be >= 1");
  }
};

struct BaselineParams {
  int vmi_samples = 20;
  double vmi_beta_factor = 1.5;  // neighbourhood radius beta = factor * eps
  int emi_samples = 11;
  double emi_eta = 7.0;  // sampling interval bound, in units of the step size

  void validate() const {
    if (vmi_samples < 1 || emi_samples < 1) throw UsageError("sample counts must be >= 1");
    if (!(vmi_beta_factor >= 0.0) || !(emi_eta >= 0.0)) {
      throw UsageError("VMI/EMI radii must be >= 0");
    }
  }
};

/// Gradient-norm regularized I-FGSM / MI-FGSM: one point sampled per step
/// in the zeta-ball, penalty lambda on its gradient norm.
struct RegParams {
  double lambda = 0.5 * (16.0 / 255.0) / 10.0;  // delta * alpha at the default budget
  double zeta_factor = 3.0;

  void validate() const {
    if (!(lambda >= 0.0)) throw UsageError("lambda must be >= 0");
    if (!(zeta_factor >= 0.0)) throw UsageError("zeta factor must be >= 0");
  }
};

enum class TransformKind { None, Dim, Sim };

struct TransformParams {
  TransformKind kind = TransformKind::None;
  double dim_probability = 0.5;
  double dim_resize_ratio = 0.875;
  int sim_copies = 5;
};

enum class Method { IFgsm, MiFgsm, NiFgsm, VmiFgsm, EmiFgsm, Pgn, RegIFgsm, RegMiFgsm };

std::string_view method_name(Method m);
Method parse_method(std::string_view name);
std::string_view transform_name(TransformKind t);
TransformKind parse_transform(std::string_view name);

struct IterationRecord {
  double loss = 0.0;         // J at the iterate before the update
  double update_l1 = 0.0;    // |g|_1 of the gradient fed to the update
  double momentum_l1 = 0.0;  // |g_{t+1}|_1 after accumulation (0 without momentum)
  bool degenerate = false;   // zero gradient: no normalization, no step
};

template <typename Scalar>
struct AdvResult {
  Tensor<Scalar> adversarial;
  Tensor<Scalar> original;
  std::uint32_t label = 0;
  Method method = Method::IFgsm;
  AttackBudget budget;
  std::vector<IterationRecord> iterations;
  std::size_t gradient_evals = 0;
};

namespace detail {

/// Per-coordinate bounds of the eps-ball intersected with the clamp range.
/// Bounds are nudged inward when rounding to Scalar would place them more
/// than eps away from the clean pixel or outside the clamp range.
template <typename Scalar>
struct Box {
  Vector<Scalar> lower, upper;

  Box(const Vector<Scalar>& x, const AttackBudget& b) : lower(x.size()), upper(x.size()) {
    auto cmin = static_cast<Scalar>(b.clamp_min);
    auto cmax = static_cast<Scalar>(b.clamp_max);
    if (static_cast<double>(cmin) < b.clamp_min) cmin = std::nextafter(cmin, cmax);
    if (static_cast<double>(cmax) > b.clamp_max) cmax = std::nextafter(cmax, cmin);
    for (Index i = 0; i < x.size(); ++i) {
      const double xi = static_cast<double>(x[i]);
      auto lo = static_cast<Scalar>(xi - b.eps);
      auto hi = static_cast<Scalar>(xi + b.eps);
      if (xi - static_cast<double>(lo) > b.eps) lo = std::nextafter(lo, x[i]);
      if (static_cast<double>(hi) - xi > b.eps) hi = std::nextafter(hi, x[i]);
      lower[i] = std::max(lo, cmin);
      upper[i] = std::min(hi, cmax);
      if (lower[i] > upper[i]) {
        // Clean pixel outside the clamp range by more than eps: pin it.
        lower[i] = upper[i] = std::min(std::max(x[i], cmin), cmax);
      }
    }
  }

  void step(Vector<Scalar>& x, const Vector<Scalar>& direction, Scalar alpha) const {
    x = (x + alpha * direction.array().sign().matrix()).cwiseMax(lower).cwiseMin(upper);
  }
};

/// g_{t+1} = mu g_t + g / |g|_1. A zero (or non-finite) norm leaves the
/// normalized term out; returns false so the caller skips the step.
template <typename Scalar>
bool accumulate_momentum(Vector<Scalar>& momentum, const Vector<Scalar>& g, double decay) {
  const Scalar l1 = g.template lpNorm<1>();
  if (!(l1 > Scalar(0)) || !std::isfinite(l1)) {
    momentum = static_cast<Scalar>(decay) * momentum;
    return false;
  }
  momentum = static_cast<Scalar>(decay) * momentum + g / l1;
  return true;
}

template <typename Scalar>
Vector<Scalar> sample_linf_ball(const Vector<Scalar>& center, double radius, Rng& rng) {
  if (radius == 0.0) return center;
  std::uniform_real_distribution<double> dist(-radius, radius);
  Vector<Scalar> out(center.size());
  for (Index i = 0; i < center.size(); ++i) {
    out[i] = center[i] + static_cast<Scalar>(dist(rng));
  }
  return out;
}

/// `count` points evenly spaced in [-1, 1]; a single point is {0}.
inline std::vector<double> linspace_unit(int count) {
  if (count == 1) return {0.0};
  std::vector<double> out(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = -1.0 + 2.0 * i / (count - 1);
  return out;
}

/// Shared iteration driver. `gradient(x_t, momentum)` returns the update
/// gradient for the current iterate.
template <typename Scalar, typename GradientFn>
AdvResult<Scalar> iterate(const Objective<Scalar>& objective, const Tensor<Scalar>& x,
                          std::uint32_t label, const AttackBudget& budget, Method method,
                          bool use_momentum, GradientFn&& gradient) {
  budget.validate();
  if (x.size() != objective.dimension()) {
    throw DimensionError("attack input has " + std::to_string(x.size()) +
                         " values, objective expects " + std::to_string(objective.dimension()));
  }
  AdvResult<Scalar> out;
  out.original = x;
  out.label = label;
  out.method = method;
  out.budget = budget;
  const Box<Scalar> box(x.data(), budget);
  const auto alpha = static_cast<Scalar>(budget.step_size());
  Vector<Scalar> adv = x.data();
  Vector<Scalar> momentum = Vector<Scalar>::Zero(adv.size());
  for (int t = 0; t < budget.steps; ++t) {
    IterationRecord rec;
    rec.loss = static_cast<double>(objective.value(adv));
    const Vector<Scalar> g = gradient(static_cast<const Vector<Scalar>&>(adv),
                                      static_cast<const Vector<Scalar>&>(momentum));
    rec.update_l1 = static_cast<double>(g.template lpNorm<1>());
    bool moved;
    if (use_momentum) {
      moved = accumulate_momentum(momentum, g, budget.decay);
      rec.momentum_l1 = static_cast<double>(momentum.template lpNorm<1>());
      if (moved) box.step(adv, momentum, alpha);
    } else {
      moved = rec.update_l1 > 0.0 && std::isfinite(rec.update_l1);
      if (moved) box.step(adv, g, alpha);
    }
    rec.degenerate = !moved;
    out.iterations.push_back(rec);
  }
  out.adversarial = Tensor<Scalar>(x.shape(), std::move(adv));
  return out;
}

}  // namespace detail

/// I-FGSM: x_{t+1} = clip(x_t + alpha sign(grad J(x_t))).
template <typename Scalar>
AdvResult<Scalar> ifgsm(const Objective<Scalar>& objective, const Tensor<Scalar>& x,
                        std::uint32_t y, const AttackBudget& budget) {
  CountingObjective<Scalar> counted(objective);
  auto out = detail::iterate(counted, x, y, budget, Method::IFgsm, false,
                             [&](const Vector<Scalar>& adv, const Vector<Scalar>&) {
                               return counted.gradient(adv);
                             });
  out.gradient_evals = counted.gradient_evals();
  return out;
}

/// MI-FGSM: sign step along the momentum of L1-normalized gradients.
template <typename Scalar>
AdvResult<Scalar> mifgsm(const Objective<Scalar>& objective, const Tensor<Scalar>& x,
                         std::uint32_t y, const AttackBudget& budget) {
  CountingObjective<Scalar> counted(objective);
  auto out = detail::iterate(counted, x, y, budget, Method::MiFgsm, true,
                             [&](const Vector<Scalar>& adv, const Vector<Scalar>&) {
                               return counted.gradient(adv);
                             });
  out.gradient_evals = counted.gradient_evals();
  return out;
}

/// NI-FGSM: MI-FGSM with the gradient taken at x_t + alpha mu g_t.
template <typename Scalar>
AdvResult<Scalar> nifgsm(const Objective<Scalar>& objective, const Tensor<Scalar>& x,
                         std::uint32_t y, const AttackBudget& budget) {
  CountingObjective<Scalar> counted(objective);
  const auto lookahead = static_cast<Scalar>(budget.step_size() * budget.decay);
  auto out = detail::iterate(counted, x, y, budget, Method::NiFgsm, true,
                             [&](const Vector<Scalar>& adv, const Vector<Scalar>& momentum) {
                               const Vector<Scalar> ahead = adv + lookahead * momentum;
                               return counted.gradient(ahead);
                             });
  out.gradient_evals = counted.gradient_evals();
  return out;
}

/// VMI-FGSM. Each step feeds grad J(x_t) + v_t into the momentum, where
/// v_t = mean_i grad J(x_{t-1} + r_i) - grad J(x_{t-1}) was measured around
/// the previous iterate with r_i uniform in [-beta, beta]^n; v_0 = 0.
template <typename Scalar>
AdvResult<Scalar> vmifgsm(const Objective<Scalar>& objective, const Tensor<Scalar>& x,
                          std::uint32_t y, const AttackBudget& budget,
                          const BaselineParams& params, Rng& rng) {
  params.validate();
  CountingObjective<Scalar> counted(objective);
  const double beta = params.vmi_beta_factor * budget.eps;
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(params.vmi_samples);
  Vector<Scalar> variance = Vector<Scalar>::Zero(x.size());
  auto out = detail::iterate(
      counted, x, y, budget, Method::VmiFgsm, true,
      [&](const Vector<Scalar>& adv, const Vector<Scalar>&) {
        const Vector<Scalar> g = counted.gradient(adv);
        Vector<Scalar> update = g + variance;
        Vector<Scalar> neighbourhood = Vector<Scalar>::Zero(adv.size());
        for (int i = 0; i < params.vmi_samples; ++i) {
          neighbourhood += counted.gradient(detail::sample_linf_ball(adv, beta, rng));
        }
        variance = inv_n * neighbourhood - g;
        return update;
      });
  out.gradient_evals = counted.gradient_evals();
  return out;
}

/// EMI-FGSM. Averages gradients at x_t + c_i eta alpha d_{t-1}, c_i evenly
/// spaced in [-1, 1], where d_{t-1} is the previous averaged gradient
/// scaled to unit mean absolute value (zero on the first step).
template <typename Scalar>
AdvResult<Scalar> emifgsm(const Objective<Scalar>& objective, const Tensor<Scalar>& x,
                          std::uint32_t y, const AttackBudget& budget,
                          const BaselineParams& params) {
  params.validate();
  CountingObjective<Scalar> counted(objective);
  const auto coeffs = detail::linspace_unit(params.emi_samples);
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(params.emi_samples);
  const double radius = params.emi_eta * budget.step_size();
  Vector<Scalar> previous = Vector<Scalar>::Zero(x.size());
  auto out = detail::iterate(
      counted, x, y, budget, Method::EmiFgsm, true,
      [&](const Vector<Scalar>& adv, const Vector<Scalar>&) {
        const Scalar mean_abs = previous.cwiseAbs().mean();
        const Vector<Scalar> dir =
            mean_abs > Scalar(0) ? Vector<Scalar>(previous / mean_abs)
                                 : Vector<Scalar>(Vector<Scalar>::Zero(adv.size()));
        Vector<Scalar> avg;
        for (std::size_t i = 0; i < coeffs.size(); ++i) {
          const Vector<Scalar> point = adv + static_cast<Scalar>(coeffs[i] * radius) * dir;
          const Vector<Scalar> g = inv_n * counted.gradient(point);
          if (i == 0) {
            avg = g;
          } else {
            avg += g;
          }
        }
        previous = avg;
        return avg;
      });
  out.gradient_evals = counted.gradient_evals();
  return out;
}

/// Penalizing-gradient-norm attack. Each step averages N interpolated
/// gradients taken at points drawn uniformly from the zeta-ball around the
/// iterate, then applies the MI-FGSM momentum and sign step.
template <typename Scalar>
AdvResult<Scalar> pgn(const Objective<Scalar>& objective, const Tensor<Scalar>& x,
                      std::uint32_t y, const AttackBudget& budget, const PgnParams& params,
                      const FdConfig& fd, Rng& rng) {
  params.validate();
  fd.validate();
  CountingObjective<Scalar> counted(objective);
  const double zeta = params.zeta(budget);
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(params.samples);
  auto out = detail::iterate(
      counted, x, y, budget, Method::Pgn, true,
      [&](const Vector<Scalar>& adv, const Vector<Scalar>&) {
        Vector<Scalar> averaged;
        for (int i = 0; i < params.samples; ++i) {
          const Vector<Scalar> sample = detail::sample_linf_ball(adv, zeta, rng);
          const auto pg = pgn_gradient(counted, sample, params.delta, fd);
          if (i == 0) {
            averaged = inv_n * pg.gradient;
          } else {
            averaged += inv_n * pg.gradient;
          }
        }
        return averaged;
      });
  out.gradient_evals = counted.gradient_evals();
  return out;
}

/// I-FGSM or MI-FGSM whose per-step gradient penalizes the gradient norm at
/// one point sampled from the zeta-ball (finite-difference HVP, unit-L2
/// direction, step fd.fd_step).
template <typename Scalar>
AdvResult<Scalar> regularized_attack(Method base, const Objective<Scalar>& objective,
                                     const Tensor<Scalar>& x, std::uint32_t y,
                                     const AttackBudget& budget, const RegParams& params,
                                     const FdConfig& fd, Rng& rng) {
  if (base != Method::IFgsm && base != Method::MiFgsm) {
    throw UsageError("regularized attack base must be ifgsm or mifgsm");
  }
  params.validate();
  fd.validate();
  CountingObjective<Scalar> counted(objective);
  const double zeta = params.zeta_factor * budget.eps;
  const bool momentum = base == Method::MiFgsm;
  auto out = detail::iterate(
      counted, x, y, budget, momentum ? Method::RegMiFgsm : Method::RegIFgsm, momentum,
      [&](const Vector<Scalar>& adv, const Vector<Scalar>&) {
        const Vector<Scalar> sample = detail::sample_linf_ball(adv, zeta, rng);
        return reg_objective_gradient(counted, adv, sample, params.lambda, fd).gradient;
      });
  out.gradient_evals = counted.gradient_evals();
  return out;
}

/// Everything needed to run any method from the command line or the bench.
struct AttackSpec {
  Method method = Method::Pgn;
  AttackBudget budget;
  PgnParams pgn;
  BaselineParams baseline;
  RegParams reg;
  std::optional<double> fd_step;  // defaults to the budget's step size
  TransformParams transform;

  /// A zero budget cannot move the image; the library default step keeps
  /// the finite difference well-defined there.
  FdConfig fd_config() const {
    const double alpha = budget.step_size();
    return {fd_step.value_or(alpha > 0.0 ? alpha : FdConfig{}.fd_step), DirectionNorm::L1};
  }

  void validate() const {
    budget.validate();
    pgn.validate();
    baseline.validate();
    reg.validate();
    fd_config().validate();
    if (transform.kind == TransformKind::Dim &&
        !(transform.dim_probability >= 0.0 && transform.dim_probability <= 1.0)) {
      throw UsageError("DIM probability must lie in [0, 1]");
    }
  }
};

/// Runs `spec` against the ensemble of `models` (cross-entropy of averaged
/// logits) with the configured input transform. gradient_evals counts model
/// backward passes.
template <typename Scalar>
AdvResult<Scalar> run_attack(const AttackSpec& spec,
                             std::span<const Classifier<Scalar>* const> models,
                             const Tensor<Scalar>& x, std::uint32_t y, Rng& rng) {
  spec.validate();
  const ClassifierObjective<Scalar> model_objective(
      std::vector<const Classifier<Scalar>*>(models.begin(), models.end()), y);
  const CountingObjective<Scalar> counted(model_objective);
  Rng transform_rng(spec.transform.kind == TransformKind::Dim ? rng() : 0);
  std::optional<DimObjective<Scalar>> dim;
  std::optional<SimObjective<Scalar>> sim;
  const Objective<Scalar>* objective = &counted;
  if (spec.transform.kind == TransformKind::Dim) {
    dim.emplace(counted, x.shape(), spec.transform.dim_probability,
                spec.transform.dim_resize_ratio, transform_rng);
    objective = &*dim;
  } else if (spec.transform.kind == TransformKind::Sim) {
    sim.emplace(counted, spec.transform.sim_copies);
    objective = &*sim;
  }

  AdvResult<Scalar> out;
  switch (spec.method) {
    case Method::IFgsm:
      out = ifgsm(*objective, x, y, spec.budget);
      break;
    case Method::MiFgsm:
      out = mifgsm(*objective, x, y, spec.budget);
      break;
    case Method::NiFgsm:
      out = nifgsm(*objective, x, y, spec.budget);
      break;
    case Method::VmiFgsm:
      out = vmifgsm(*objective, x, y, spec.budget, spec.baseline, rng);
      break;
    case Method::EmiFgsm:
      out = emifgsm(*objective, x, y, spec.budget, spec.baseline);
      break;
    case Method::Pgn:
      out = pgn(*objective, x, y, spec.budget, spec.pgn, spec.fd_config(), rng);
      break;
    case Method::RegIFgsm:
      out = regularized_attack(Method::IFgsm, *objective, x, y, spec.budget, spec.reg,
                               {spec.fd_config().fd_step, DirectionNorm::L2}, rng);
      break;
    case Method::RegMiFgsm:
      out = regularized_attack(Method::MiFgsm, *objective, x, y, spec.budget, spec.reg,
                               {spec.fd_config().fd_step, DirectionNorm::L2}, rng);
      break;
  }
  out.gradient_evals = counted.gradient_evals();
  return out;
}

template <typename Scalar>
AdvResult<Scalar> run_attack(const AttackSpec& spec, const Classifier<Scalar>& model,
                             const Tensor<Scalar>& x, std::uint32_t y, Rng& rng) {
  const Classifier<Scalar>* models[] = {&model};
  return run_attack<Scalar>(spec, models, x, y, rng);
}

}  // namespace pgn
