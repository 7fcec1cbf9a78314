#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "pgn/objective.hpp"
#include "pgn/random.hpp"

namespace pgn {

/// Output pixel i of a diverse-input transform copies input pixel source[i],
/// or is zero padding when source[i] < 0. Linear in the input, so the
/// gradient is the matching scatter-add.
struct PixelMap {
  std::vector<Index> source;

  bool identity() const {
    for (std::size_t i = 0; i < source.size(); ++i) {
      if (source[i] != static_cast<Index>(i)) return false;
    }
    return true;
  }

  template <typename Scalar>
  Vector<Scalar> apply(const Vector<Scalar>& x) const {
    Vector<Scalar> out(static_cast<Index>(source.size()));
    for (std::size_t i = 0; i < source.size(); ++i) {
      out[static_cast<Index>(i)] = source[i] < 0 ? Scalar(0) : x[source[i]];
    }
    return out;
  }

  template <typename Scalar>
  Vector<Scalar> pullback(const Vector<Scalar>& grad_out) const {
    Vector<Scalar> out = Vector<Scalar>::Zero(grad_out.size());
    for (std::size_t i = 0; i < source.size(); ++i) {
      if (source[i] >= 0) out[source[i]] += grad_out[static_cast<Index>(i)];
    }
    return out;
  }
};

/// Diverse-input map for an H x W x C image: with probability p, shrink by
/// nearest-neighbour resampling to a random size in [ratio * side, side] and
/// zero-pad back to H x W at a random offset; otherwise identity.
inline PixelMap draw_dim_map(const Shape& shape, double probability, double resize_ratio,
                             Rng& rng) {
  if (!(probability >= 0.0 && probability <= 1.0)) {
    throw UsageError("DIM probability must lie in [0, 1]");
  }
  if (!(resize_ratio > 0.0 && resize_ratio <= 1.0)) {
    throw UsageError("DIM resize ratio must lie in (0, 1]");
  }
  const Index h = shape.at(0), w = shape.at(1), c = shape.at(2);
  PixelMap map;
  map.source.resize(static_cast<std::size_t>(h * w * c));
  std::bernoulli_distribution apply(probability);
  if (!apply(rng)) {
    for (std::size_t i = 0; i < map.source.size(); ++i) map.source[i] = static_cast<Index>(i);
    return map;
  }
  const Index min_h = std::max<Index>(1, static_cast<Index>(std::ceil(resize_ratio * h)));
  std::uniform_int_distribution<Index> size_dist(min_h, h);
  const Index rh = size_dist(rng);
  const Index rw = std::max<Index>(1, (rh * w) / h);
  std::uniform_int_distribution<Index> top_dist(0, h - rh);
  std::uniform_int_distribution<Index> left_dist(0, w - rw);
  const Index top = top_dist(rng);
  const Index left = left_dist(rng);
  std::fill(map.source.begin(), map.source.end(), Index{-1});
  for (Index i = 0; i < rh; ++i) {
    const Index si = (i * h) / rh;
    for (Index j = 0; j < rw; ++j) {
      const Index sj = (j * w) / rw;
      for (Index ch = 0; ch < c; ++ch) {
        map.source[static_cast<std::size_t>(((top + i) * w + left + j) * c + ch)] =
            (si * w + sj) * c + ch;
      }
    }
  }
  return map;
}

template <typename Scalar>
Tensor<Scalar> dim_transform(const Tensor<Scalar>& x, Rng& rng, double probability,
                             double resize_ratio) {
  const PixelMap map = draw_dim_map(x.shape(), probability, resize_ratio, rng);
  return Tensor<Scalar>(x.shape(), map.apply(x.data()));
}

/// Gradient through a fresh random diverse-input transform on every
/// evaluation. value() reports the untransformed loss.
template <typename Scalar>
class DimObjective final : public Objective<Scalar> {
 public:
  DimObjective(const Objective<Scalar>& inner, Shape shape, double probability,
               double resize_ratio, Rng& rng)
      : inner_(inner), shape_(std::move(shape)), probability_(probability),
        resize_ratio_(resize_ratio), rng_(rng) {
    if (shape_size(shape_) != inner_.dimension()) throw DimensionError("DIM shape mismatch");
  }

  Index dimension() const override { return inner_.dimension(); }
  Scalar value(const Vector<Scalar>& x) const override { return inner_.value(x); }

  Evaluation<Scalar> evaluate(const Vector<Scalar>& x) const override {
    const PixelMap map = draw_dim_map(shape_, probability_, resize_ratio_, rng_);
    auto e = inner_.evaluate(map.apply(x));
    return {e.value, map.pullback(e.gradient)};
  }

 private:
  const Objective<Scalar>& inner_;
  Shape shape_;
  double probability_;
  double resize_ratio_;
  Rng& rng_;
};

/// Scale-invariance averaging: mean over i < copies of the gradient of
/// J(x / 2^i) with respect to x (chain factor 2^-i included).
template <typename Scalar>
class SimObjective final : public Objective<Scalar> {
 public:
  SimObjective(const Objective<Scalar>& inner, int copies) : inner_(inner), copies_(copies) {
    if (copies_ < 1) throw UsageError("SIM needs at least one copy");
  }

  Index dimension() const override { return inner_.dimension(); }
  Scalar value(const Vector<Scalar>& x) const override { return inner_.value(x); }

  Evaluation<Scalar> evaluate(const Vector<Scalar>& x) const override {
    auto first = inner_.evaluate(x);
    if (copies_ == 1) return first;
    const Scalar inv = Scalar(1) / static_cast<Scalar>(copies_);
    Evaluation<Scalar> out{inv * first.value, inv * first.gradient};
    Scalar scale = 1;
    for (int i = 1; i < copies_; ++i) {
      scale /= 2;
      auto e = inner_.evaluate(scale * x);
      out.value += inv * e.value;
      out.gradient += (inv * scale) * e.gradient;
    }
    return out;
  }

 private:
  const Objective<Scalar>& inner_;
  int copies_;
};

template <typename Scalar>
Vector<Scalar> sim_gradient(const Objective<Scalar>& objective, const Vector<Scalar>& x,
                            int copies) {
  return SimObjective<Scalar>(objective, copies).gradient(x);
}

}  // namespace pgn
