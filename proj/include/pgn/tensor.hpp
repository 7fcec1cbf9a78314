#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pgn/errors.hpp"

namespace pgn {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMajorMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Dense row-major n-dimensional array. Storage is a flat Eigen vector so
/// the numeric code can use Eigen expressions on `data()` directly.
template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;

  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(Vector<Scalar>::Zero(shape_size(shape_))) {}

  Tensor(Shape shape, Vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError("tensor of shape " + shape_string(shape_) + " needs " +
                           std::to_string(shape_size(shape_)) + " values, got " +
                           std::to_string(data_.size()));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
  Index dim(std::size_t axis) const { return shape_.at(axis); }
  Index size() const noexcept { return data_.size(); }

  const Vector<Scalar>& data() const noexcept { return data_; }
  Vector<Scalar>& data() noexcept { return data_; }

  Scalar item() const {
    if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  template <typename To>
  Tensor<To> cast() const {
    return Tensor<To>(shape_, data_.template cast<To>());
  }

 private:
  Shape shape_;
  Vector<Scalar> data_;
};

/// Same shape and identical bytes. NaN payloads compare by bits.
template <typename Scalar>
bool bit_equal(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(),
                     static_cast<std::size_t>(a.size()) * sizeof(Scalar)) == 0;
}

template <typename Scalar>
bool bit_equal(const Vector<Scalar>& a, const Vector<Scalar>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(Scalar)) == 0;
}

struct NodeId {
  std::size_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

enum class OpKind { Leaf, Dense, Relu, Conv2d, MaxPool2x2, Reshape, WeightedSum, SoftmaxCrossEntropy };

/// Append-only reverse-mode tape. Nodes are stored in creation order, which
/// is a topological order, so backward is a single reverse sweep.
template <typename Scalar>
class Graph {
 public:
  using TensorT = Tensor<Scalar>;

  NodeId leaf(TensorT value, bool requires_grad) {
    Node node;
    node.op = OpKind::Leaf;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    return push(std::move(node));
  }

  /// input [B, in], weight [out, in], bias [out] -> [B, out]
  NodeId dense(NodeId input, NodeId weight, NodeId bias) {
    const auto& x = value(input);
    const auto& w = value(weight);
    const auto& b = value(bias);
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || w.dim(1) != x.dim(1) ||
        b.dim(0) != w.dim(0)) {
      throw DimensionError("dense: input " + shape_string(x.shape()) + ", weight " +
                           shape_string(w.shape()) + ", bias " + shape_string(b.shape()));
    }
    const Index batch = x.dim(0), in = x.dim(1), out = w.dim(0);
    TensorT y(Shape{batch, out});
    Eigen::Map<const Matrix<Scalar>> xm(x.data().data(), in, batch);
    Eigen::Map<const RowMajorMatrix<Scalar>> wm(w.data().data(), out, in);
    Eigen::Map<Matrix<Scalar>> ym(y.data().data(), out, batch);
    ym.noalias() = wm * xm;
    ym.colwise() += b.data();
    return push_op(OpKind::Dense, {input, weight, bias}, std::move(y));
  }

  NodeId relu(NodeId input) {
    const auto& x = value(input);
    TensorT y(x.shape(), x.data().cwiseMax(Scalar(0)));
    return push_op(OpKind::Relu, {input}, std::move(y));
  }

  /// Stride-1, zero-padded ("same") 2-D convolution.
  /// input [B, H, W, Cin], kernel [Cout, K, K, Cin], bias [Cout] -> [B, H, W, Cout]
  NodeId conv2d(NodeId input, NodeId kernel, NodeId bias) {
    const auto& x = value(input);
    const auto& k = value(kernel);
    const auto& b = value(bias);
    if (x.rank() != 4 || k.rank() != 4 || b.rank() != 1 || k.dim(1) != k.dim(2) ||
        k.dim(1) % 2 == 0 || k.dim(3) != x.dim(3) || b.dim(0) != k.dim(0)) {
      throw DimensionError("conv2d: input " + shape_string(x.shape()) + ", kernel " +
                           shape_string(k.shape()) + ", bias " + shape_string(b.shape()));
    }
    const Index batch = x.dim(0), h = x.dim(1), w = x.dim(2), cout = k.dim(0);
    TensorT y(Shape{batch, h, w, cout});
    Eigen::Map<const RowMajorMatrix<Scalar>> km(k.data().data(), cout, k.size() / cout);
    Matrix<Scalar> patches;
    for (Index n = 0; n < batch; ++n) {
      im2col(x, n, k.dim(1), patches);
      Eigen::Map<Matrix<Scalar>> ym(y.data().data() + n * h * w * cout, cout, h * w);
      ym.noalias() = km * patches;
      ym.colwise() += b.data();
    }
    return push_op(OpKind::Conv2d, {input, kernel, bias}, std::move(y));
  }

  /// [B, H, W, C] -> [B, H/2, W/2, C]; H and W must be even.
  NodeId max_pool2x2(NodeId input) {
    const auto& x = value(input);
    if (x.rank() != 4 || x.dim(1) % 2 != 0 || x.dim(2) % 2 != 0) {
      throw DimensionError("max_pool2x2: input " + shape_string(x.shape()));
    }
    const Index batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const Index oh = h / 2, ow = w / 2;
    TensorT y(Shape{batch, oh, ow, c});
    std::vector<Index> argmax(static_cast<std::size_t>(y.size()));
    const Scalar* src = x.data().data();
    Index o = 0;
    for (Index n = 0; n < batch; ++n) {
      for (Index i = 0; i < oh; ++i) {
        for (Index j = 0; j < ow; ++j) {
          for (Index ch = 0; ch < c; ++ch, ++o) {
            Index best = ((n * h + 2 * i) * w + 2 * j) * c + ch;
            for (Index di = 0; di < 2; ++di) {
              for (Index dj = 0; dj < 2; ++dj) {
                const Index at = ((n * h + 2 * i + di) * w + 2 * j + dj) * c + ch;
                if (src[at] > src[best]) best = at;
              }
            }
            y.data()[o] = src[best];
            argmax[static_cast<std::size_t>(o)] = best;
          }
        }
      }
    }
    NodeId id = push_op(OpKind::MaxPool2x2, {input}, std::move(y));
    nodes_[id.index].saved_index = std::move(argmax);
    return id;
  }

  NodeId reshape(NodeId input, Shape shape) {
    const auto& x = value(input);
    if (shape_size(shape) != x.size()) {
      throw DimensionError("reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
    }
    return push_op(OpKind::Reshape, {input}, x.reshaped(std::move(shape)));
  }

  /// sum_i coeffs[i] * inputs[i]; all inputs share one shape.
  NodeId weighted_sum(std::span<const NodeId> inputs, std::span<const Scalar> coeffs) {
    if (inputs.empty() || inputs.size() != coeffs.size()) {
      throw DimensionError("weighted_sum: " + std::to_string(inputs.size()) + " inputs, " +
                           std::to_string(coeffs.size()) + " coefficients");
    }
    TensorT y(value(inputs[0]).shape());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const auto& xi = value(inputs[i]);
      if (xi.shape() != y.shape()) {
        throw DimensionError("weighted_sum: shape " + shape_string(xi.shape()) + " vs " +
                             shape_string(y.shape()));
      }
      y.data() += coeffs[i] * xi.data();
    }
    NodeId id = push_op(OpKind::WeightedSum, {inputs.begin(), inputs.end()}, std::move(y));
    nodes_[id.index].coeffs.assign(coeffs.begin(), coeffs.end());
    return id;
  }

  NodeId mean(std::span<const NodeId> inputs) {
    std::vector<Scalar> coeffs(inputs.size(), Scalar(1) / static_cast<Scalar>(inputs.size()));
    if (inputs.size() == 1) return inputs[0];
    return weighted_sum(inputs, coeffs);
  }

  /// Mean over the batch of -log softmax(logits)[label]. logits [B, C].
  NodeId softmax_cross_entropy(NodeId logits, std::span<const std::uint32_t> labels) {
    const auto& z = value(logits);
    if (z.rank() != 2 || static_cast<std::size_t>(z.dim(0)) != labels.size()) {
      throw DimensionError("softmax_cross_entropy: logits " + shape_string(z.shape()) + " with " +
                           std::to_string(labels.size()) + " labels");
    }
    const Index batch = z.dim(0), classes = z.dim(1);
    Eigen::Map<const Matrix<Scalar>> zm(z.data().data(), classes, batch);
    Matrix<Scalar> probs(classes, batch);
    Scalar total = 0;
    for (Index n = 0; n < batch; ++n) {
      const Index label = static_cast<Index>(labels[static_cast<std::size_t>(n)]);
      if (label >= classes) {
        throw DimensionError("label " + std::to_string(label) + " out of range for " +
                             std::to_string(classes) + " classes");
      }
      const Scalar top = zm.col(n).maxCoeff();
      probs.col(n) = (zm.col(n).array() - top).exp().matrix();
      const Scalar sum = probs.col(n).sum();
      probs.col(n) /= sum;
      total += top + std::log(sum) - zm(label, n);
    }
    TensorT loss(Shape{}, Vector<Scalar>::Constant(1, total / static_cast<Scalar>(batch)));
    NodeId id = push_op(OpKind::SoftmaxCrossEntropy, {logits}, std::move(loss));
    Node& node = nodes_[id.index];
    node.saved = Eigen::Map<const Vector<Scalar>>(probs.data(), probs.size());
    node.labels.assign(labels.begin(), labels.end());
    return id;
  }

  const TensorT& value(NodeId id) const { return nodes_.at(id.index).value; }

  /// Gradient of the last backward root with respect to `id`. Empty when the
  /// node does not require a gradient or was not reached.
  const TensorT& grad(NodeId id) const { return nodes_.at(id.index).grad; }

  bool has_grad(NodeId id) const { return nodes_.at(id.index).grad.size() != 0; }

  std::size_t size() const noexcept { return nodes_.size(); }

  OpKind op(NodeId id) const { return nodes_.at(id.index).op; }

  /// Reverse sweep from a scalar root; every node is visited at most once.
  void backward(NodeId root) {
    Node& top = nodes_.at(root.index);
    if (top.value.size() != 1) {
      throw DimensionError("backward root must be scalar, got " + shape_string(top.value.shape()));
    }
    for (auto& node : nodes_) node.grad = TensorT();
    top.grad = TensorT(top.value.shape(), Vector<Scalar>::Ones(1));
    for (std::size_t i = root.index + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (node.grad.size() == 0 || !node.requires_grad || node.op == OpKind::Leaf) continue;
      propagate(node);
    }
  }

 private:
  struct Node {
    OpKind op = OpKind::Leaf;
    std::vector<NodeId> inputs;
    TensorT value;
    TensorT grad;
    bool requires_grad = false;
    std::vector<Scalar> coeffs;
    std::vector<Index> saved_index;
    Vector<Scalar> saved;
    std::vector<std::uint32_t> labels;
  };

  NodeId push(Node node) {
    nodes_.push_back(std::move(node));
    return NodeId{nodes_.size() - 1};
  }

  NodeId push_op(OpKind op, std::vector<NodeId> inputs, TensorT value) {
    Node node;
    node.op = op;
    node.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                     [&](NodeId in) { return nodes_[in.index].requires_grad; });
    node.inputs = std::move(inputs);
    node.value = std::move(value);
    return push(std::move(node));
  }

  Vector<Scalar>* grad_slot(NodeId id) {
    Node& node = nodes_[id.index];
    if (!node.requires_grad) return nullptr;
    if (node.grad.size() == 0) node.grad = TensorT(node.value.shape());
    return &node.grad.data();
  }

  void im2col(const TensorT& x, Index n, Index ksize, Matrix<Scalar>& patches) const {
    const Index h = x.dim(1), w = x.dim(2), c = x.dim(3), pad = ksize / 2;
    patches.setZero(ksize * ksize * c, h * w);
    const Scalar* src = x.data().data() + n * h * w * c;
    for (Index i = 0; i < h; ++i) {
      for (Index j = 0; j < w; ++j) {
        Scalar* col = patches.data() + (i * w + j) * patches.rows();
        for (Index di = 0; di < ksize; ++di) {
          const Index si = i + di - pad;
          if (si < 0 || si >= h) continue;
          for (Index dj = 0; dj < ksize; ++dj) {
            const Index sj = j + dj - pad;
            if (sj < 0 || sj >= w) continue;
            std::copy_n(src + (si * w + sj) * c, c, col + (di * ksize + dj) * c);
          }
        }
      }
    }
  }

  void col2im(const Matrix<Scalar>& patches, Index n, Index ksize, const Shape& shape,
              Vector<Scalar>& dx) const {
    const Index h = shape[1], w = shape[2], c = shape[3], pad = ksize / 2;
    Scalar* dst = dx.data() + n * h * w * c;
    for (Index i = 0; i < h; ++i) {
      for (Index j = 0; j < w; ++j) {
        const Scalar* col = patches.data() + (i * w + j) * patches.rows();
        for (Index di = 0; di < ksize; ++di) {
          const Index si = i + di - pad;
          if (si < 0 || si >= h) continue;
          for (Index dj = 0; dj < ksize; ++dj) {
            const Index sj = j + dj - pad;
            if (sj < 0 || sj >= w) continue;
            Scalar* out = dst + (si * w + sj) * c;
            const Scalar* in = col + (di * ksize + dj) * c;
            for (Index ch = 0; ch < c; ++ch) out[ch] += in[ch];
          }
        }
      }
    }
  }

  void propagate(Node& node) {
    const Vector<Scalar>& dy = node.grad.data();
    switch (node.op) {
      case OpKind::Leaf:
        break;
      case OpKind::Dense: {
        const auto& x = nodes_[node.inputs[0].index].value;
        const auto& w = nodes_[node.inputs[1].index].value;
        const Index batch = x.dim(0), in = x.dim(1), out = w.dim(0);
        Eigen::Map<const Matrix<Scalar>> dym(dy.data(), out, batch);
        if (auto* dx = grad_slot(node.inputs[0])) {
          Eigen::Map<const RowMajorMatrix<Scalar>> wm(w.data().data(), out, in);
          Eigen::Map<Matrix<Scalar>>(dx->data(), in, batch).noalias() += wm.transpose() * dym;
        }
        if (auto* dw = grad_slot(node.inputs[1])) {
          Eigen::Map<const Matrix<Scalar>> xm(x.data().data(), in, batch);
          Eigen::Map<RowMajorMatrix<Scalar>>(dw->data(), out, in).noalias() += dym * xm.transpose();
        }
        if (auto* db = grad_slot(node.inputs[2])) *db += dym.rowwise().sum();
        break;
      }
      case OpKind::Relu: {
        if (auto* dx = grad_slot(node.inputs[0])) {
          const auto& x = nodes_[node.inputs[0].index].value.data();
          *dx += (x.array() > Scalar(0)).select(dy, Scalar(0)).matrix();
        }
        break;
      }
      case OpKind::Conv2d: {
        const auto& x = nodes_[node.inputs[0].index].value;
        const auto& k = nodes_[node.inputs[1].index].value;
        const Index batch = x.dim(0), hw = x.dim(1) * x.dim(2), cout = k.dim(0);
        const Index ksize = k.dim(1);
        Eigen::Map<const RowMajorMatrix<Scalar>> km(k.data().data(), cout, k.size() / cout);
        auto* dx = grad_slot(node.inputs[0]);
        auto* dk = grad_slot(node.inputs[1]);
        auto* db = grad_slot(node.inputs[2]);
        Matrix<Scalar> patches;
        Matrix<Scalar> dpatches;
        for (Index n = 0; n < batch; ++n) {
          Eigen::Map<const Matrix<Scalar>> dym(dy.data() + n * hw * cout, cout, hw);
          if (dk) {
            im2col(x, n, ksize, patches);
            Eigen::Map<RowMajorMatrix<Scalar>>(dk->data(), cout, k.size() / cout).noalias() +=
                dym * patches.transpose();
          }
          if (db) *db += dym.rowwise().sum();
          if (dx) {
            dpatches.noalias() = km.transpose() * dym;
            col2im(dpatches, n, ksize, x.shape(), *dx);
          }
        }
        break;
      }
      case OpKind::MaxPool2x2: {
        if (auto* dx = grad_slot(node.inputs[0])) {
          for (Index o = 0; o < dy.size(); ++o) {
            (*dx)[node.saved_index[static_cast<std::size_t>(o)]] += dy[o];
          }
        }
        break;
      }
      case OpKind::Reshape: {
        if (auto* dx = grad_slot(node.inputs[0])) *dx += dy;
        break;
      }
      case OpKind::WeightedSum: {
        for (std::size_t i = 0; i < node.inputs.size(); ++i) {
          if (auto* dx = grad_slot(node.inputs[i])) *dx += node.coeffs[i] * dy;
        }
        break;
      }
      case OpKind::SoftmaxCrossEntropy: {
        if (auto* dz = grad_slot(node.inputs[0])) {
          const Index batch = static_cast<Index>(node.labels.size());
          const Index classes = node.saved.size() / batch;
          const Scalar scale = dy[0] / static_cast<Scalar>(batch);
          for (Index n = 0; n < batch; ++n) {
            const auto probs = node.saved.segment(n * classes, classes);
            const Index label = static_cast<Index>(node.labels[static_cast<std::size_t>(n)]);
            auto out = dz->segment(n * classes, classes);
            // p_y - 1 written as -sum_{k != y} p_k keeps precision when p_y rounds to 1.
            Scalar others = 0;
            for (Index c = 0; c < classes; ++c) {
              if (c == label) continue;
              out[c] += scale * probs[c];
              others += probs[c];
            }
            out[label] += scale * -others;
          }
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
};

}  // namespace pgn
