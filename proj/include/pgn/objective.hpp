#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "pgn/models.hpp"
#include "pgn/tensor.hpp"

namespace pgn {

template <typename Scalar>
struct Evaluation {
  Scalar value{};
  Vector<Scalar> gradient;
};

/// A scalar loss J over flat input vectors with its first-order gradient.
/// Attacks and second-order helpers are written against this interface so
/// the same code runs on classifiers and on analytic test objectives.
template <typename Scalar>
class Objective {
 public:
  virtual ~Objective() = default;

  virtual Index dimension() const = 0;
  virtual Scalar value(const Vector<Scalar>& x) const = 0;
  virtual Evaluation<Scalar> evaluate(const Vector<Scalar>& x) const = 0;

  Vector<Scalar> gradient(const Vector<Scalar>& x) const { return evaluate(x).gradient; }
};

/// Unweighted mean of per-model logits for one image.
template <typename Scalar>
Tensor<Scalar> ensemble_logits(std::span<const Classifier<Scalar>* const> models,
                               const Tensor<Scalar>& x) {
  if (models.empty()) throw UsageError("ensemble_logits: no models");
  Graph<Scalar> g;
  const NodeId input = g.leaf(as_batch(*models[0], x), false);
  std::vector<NodeId> logits;
  for (const auto* m : models) logits.push_back(m->forward(g, input, m->bind(g, false)));
  return g.value(g.mean(logits));
}

/// Cross-entropy of the (ensemble-averaged) logits for a fixed label.
template <typename Scalar>
class ClassifierObjective final : public Objective<Scalar> {
 public:
  ClassifierObjective(std::vector<const Classifier<Scalar>*> models, std::uint32_t label)
      : models_(std::move(models)), label_(label) {
    if (models_.empty()) throw UsageError("objective needs at least one model");
    shape_ = models_[0]->architecture().input_shape;
    for (const auto* m : models_) {
      if (m->architecture().input_shape != shape_ ||
          m->architecture().n_classes != models_[0]->architecture().n_classes) {
        throw DimensionError("ensemble members disagree on input shape or class count");
      }
      check_label(*m, label);
    }
  }

  ClassifierObjective(const Classifier<Scalar>& model, std::uint32_t label)
      : ClassifierObjective(std::vector<const Classifier<Scalar>*>{&model}, label) {}

  Index dimension() const override { return shape_size(shape_); }
  const Shape& input_shape() const noexcept { return shape_; }
  std::uint32_t label() const noexcept { return label_; }

  Scalar value(const Vector<Scalar>& x) const override {
    Graph<Scalar> g;
    const NodeId root = build(g, x, false).second;
    return g.value(root).item();
  }

  Evaluation<Scalar> evaluate(const Vector<Scalar>& x) const override {
    Graph<Scalar> g;
    const auto [input, root] = build(g, x, true);
    g.backward(root);
    return {g.value(root).item(), g.grad(input).data()};
  }

 private:
  std::pair<NodeId, NodeId> build(Graph<Scalar>& g, const Vector<Scalar>& x,
                                  bool input_grad) const {
    if (x.size() != dimension()) {
      throw DimensionError("objective input has " + std::to_string(x.size()) +
                           " values, expected " + std::to_string(dimension()));
    }
    Shape batch{1};
    batch.insert(batch.end(), shape_.begin(), shape_.end());
    const NodeId input = g.leaf(Tensor<Scalar>(std::move(batch), x), input_grad);
    std::vector<NodeId> logits;
    logits.reserve(models_.size());
    for (const auto* m : models_) logits.push_back(m->forward(g, input, m->bind(g, false)));
    const std::uint32_t labels[] = {label_};
    return {input, g.softmax_cross_entropy(g.mean(logits), labels)};
  }

  std::vector<const Classifier<Scalar>*> models_;
  std::uint32_t label_;
  Shape shape_;
};

/// J(x) = 1/2 x^T A x + b^T x with symmetric A. Its Hessian is A everywhere,
/// which makes finite-difference schemes exact up to rounding.
template <typename Scalar>
class QuadraticObjective final : public Objective<Scalar> {
 public:
  explicit QuadraticObjective(Matrix<Scalar> a)
      : a_(std::move(a)), b_(Vector<Scalar>::Zero(a_.rows())) {}
  QuadraticObjective(Matrix<Scalar> a, Vector<Scalar> b) : a_(std::move(a)), b_(std::move(b)) {}

  Index dimension() const override { return a_.rows(); }
  const Matrix<Scalar>& hessian() const noexcept { return a_; }

  Scalar value(const Vector<Scalar>& x) const override {
    return Scalar(0.5) * x.dot(a_ * x) + b_.dot(x);
  }

  Evaluation<Scalar> evaluate(const Vector<Scalar>& x) const override {
    Vector<Scalar> g = a_ * x + b_;
    return {Scalar(0.5) * x.dot(a_ * x) + b_.dot(x), std::move(g)};
  }

 private:
  Matrix<Scalar> a_;
  Vector<Scalar> b_;
};

/// J(x) = w^T x + c: constant gradient, flat curvature.
template <typename Scalar>
class LinearObjective final : public Objective<Scalar> {
 public:
  explicit LinearObjective(Vector<Scalar> w, Scalar c = 0) : w_(std::move(w)), c_(c) {}

  Index dimension() const override { return w_.size(); }
  Scalar value(const Vector<Scalar>& x) const override { return w_.dot(x) + c_; }
  Evaluation<Scalar> evaluate(const Vector<Scalar>& x) const override {
    return {w_.dot(x) + c_, w_};
  }

 private:
  Vector<Scalar> w_;
  Scalar c_;
};

/// Forwards to another objective and counts gradient evaluations. One
/// counter per instance; create one per call site that needs accounting.
template <typename Scalar>
class CountingObjective final : public Objective<Scalar> {
 public:
  explicit CountingObjective(const Objective<Scalar>& inner) : inner_(inner) {}

  Index dimension() const override { return inner_.dimension(); }
  Scalar value(const Vector<Scalar>& x) const override { return inner_.value(x); }
  Evaluation<Scalar> evaluate(const Vector<Scalar>& x) const override {
    ++gradient_evals_;
    return inner_.evaluate(x);
  }

  std::size_t gradient_evals() const noexcept { return gradient_evals_; }

 private:
  const Objective<Scalar>& inner_;
  mutable std::size_t gradient_evals_ = 0;
};

}  // namespace pgn
