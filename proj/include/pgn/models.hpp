#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pgn/data.hpp"
#include "pgn/random.hpp"
#include "pgn/tensor.hpp"

namespace pgn {

enum class LayerKind : std::uint32_t { Flatten = 0, Dense = 1, Relu = 2, Conv2d = 3, MaxPool2x2 = 4 };

struct LayerSpec {
  LayerKind kind = LayerKind::Flatten;
  std::uint32_t units = 0;   // output features (Dense) or output channels (Conv2d)
  std::uint32_t kernel = 0;  // Conv2d only

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Layer list plus input/output sizes. Operates on batches: the layers see
/// [B, H, W, C] until Flatten and [B, features] afterwards.
struct Architecture {
  std::string name;
  Shape input_shape;  // H, W, C
  std::uint32_t n_classes = 0;
  std::vector<LayerSpec> layers;

  /// Parameter tensor shapes in order; throws DimensionError when
  /// consecutive layers are incompatible or the output is not [n_classes].
  std::vector<Shape> parameter_shapes() const;

  Index input_size() const { return shape_size(input_shape); }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

// Default zoo.
Architecture mlp_a(const Shape& input_shape, std::uint32_t n_classes);  // 128 -> 64
Architecture mlp_b(const Shape& input_shape, std::uint32_t n_classes);  // 256
Architecture cnn_a(const Shape& input_shape, std::uint32_t n_classes);  // conv3x3x8, pool, dense
Architecture architecture_by_name(const std::string& name, const Shape& input_shape,
                                  std::uint32_t n_classes);

struct ModelMetadata {
  std::uint64_t seed = 0;
  std::uint64_t train_config_hash = 0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;

  friend bool operator==(const ModelMetadata&, const ModelMetadata&) = default;
};

template <typename Scalar>
class Classifier {
 public:
  Classifier() = default;

  Classifier(Architecture arch, std::vector<Tensor<Scalar>> params, ModelMetadata meta = {})
      : arch_(std::move(arch)), params_(std::move(params)), meta_(meta) {
    const auto shapes = arch_.parameter_shapes();
    if (shapes.size() != params_.size()) {
      throw ConsistencyError(arch_.name + ": expected " + std::to_string(shapes.size()) +
                             " parameter tensors, got " + std::to_string(params_.size()));
    }
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      if (params_[i].shape() != shapes[i]) {
        throw ConsistencyError(arch_.name + ": parameter " + std::to_string(i) + " has shape " +
                               shape_string(params_[i].shape()) + ", descriptor says " +
                               shape_string(shapes[i]));
      }
    }
  }

  /// He-uniform weights, zero biases, drawn from `seed`.
  static Classifier initialize(Architecture arch, std::uint64_t seed) {
    Rng rng(mix_seed(seed));
    std::vector<Tensor<Scalar>> params;
    for (const auto& shape : arch.parameter_shapes()) {
      Tensor<Scalar> p(shape);
      if (shape.size() > 1) {
        const Index fan_in = shape_size(shape) / shape[0];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Index i = 0; i < p.size(); ++i) p.data()[i] = static_cast<Scalar>(dist(rng));
      }
      params.push_back(std::move(p));
    }
    ModelMetadata meta;
    meta.seed = seed;
    return Classifier(std::move(arch), std::move(params), meta);
  }

  const Architecture& architecture() const noexcept { return arch_; }
  const std::vector<Tensor<Scalar>>& parameters() const noexcept { return params_; }
  std::vector<Tensor<Scalar>>& parameters() noexcept { return params_; }
  const ModelMetadata& metadata() const noexcept { return meta_; }
  ModelMetadata& metadata() noexcept { return meta_; }
  const std::string& name() const noexcept { return arch_.name; }

  /// Adds every parameter tensor to `graph` as a leaf.
  std::vector<NodeId> bind(Graph<Scalar>& graph, bool requires_grad) const {
    std::vector<NodeId> ids;
    ids.reserve(params_.size());
    for (const auto& p : params_) ids.push_back(graph.leaf(p, requires_grad));
    return ids;
  }

  /// Records the forward pass of a [B, H, W, C] batch and returns the
  /// [B, n_classes] logits node. Throws NumericError naming the first layer
  /// whose output is not finite.
  NodeId forward(Graph<Scalar>& graph, NodeId batch, std::span<const NodeId> params) const {
    const auto& in = graph.value(batch);
    if (in.rank() != 4 || Shape(in.shape().begin() + 1, in.shape().end()) != arch_.input_shape) {
      throw DimensionError(arch_.name + ": expected batch of " + shape_string(arch_.input_shape) +
                           ", got " + shape_string(in.shape()));
    }
    NodeId h = batch;
    std::size_t p = 0;
    for (std::size_t layer = 0; layer < arch_.layers.size(); ++layer) {
      const auto& spec = arch_.layers[layer];
      switch (spec.kind) {
        case LayerKind::Flatten: {
          const auto& v = graph.value(h);
          h = graph.reshape(h, Shape{v.dim(0), v.size() / v.dim(0)});
          break;
        }
        case LayerKind::Dense:
          h = graph.dense(h, params[p], params[p + 1]);
          p += 2;
          break;
        case LayerKind::Relu:
          h = graph.relu(h);
          break;
        case LayerKind::Conv2d:
          h = graph.conv2d(h, params[p], params[p + 1]);
          p += 2;
          break;
        case LayerKind::MaxPool2x2:
          h = graph.max_pool2x2(h);
          break;
      }
      if (!graph.value(h).data().allFinite()) {
        throw NumericError(layer, arch_.name + ": non-finite activation");
      }
    }
    return h;
  }

  /// Logits for a [B, H, W, C] batch without keeping the graph.
  Tensor<Scalar> logits(const Tensor<Scalar>& batch) const {
    Graph<Scalar> g;
    const auto params = bind(g, false);
    return g.value(forward(g, g.leaf(batch, false), params));
  }

  template <typename To>
  Classifier<To> cast() const {
    std::vector<Tensor<To>> params;
    for (const auto& p : params_) params.push_back(p.template cast<To>());
    return Classifier<To>(arch_, std::move(params), meta_);
  }

 private:
  Architecture arch_;
  std::vector<Tensor<Scalar>> params_;
  ModelMetadata meta_;
};

/// Wraps a single image of the model's input shape as a batch of one.
template <typename Scalar>
Tensor<Scalar> as_batch(const Classifier<Scalar>& model, const Tensor<Scalar>& x) {
  if (x.shape() != model.architecture().input_shape) {
    throw DimensionError(model.name() + ": expected input " +
                         shape_string(model.architecture().input_shape) + ", got " +
                         shape_string(x.shape()));
  }
  Shape shape{1};
  shape.insert(shape.end(), x.shape().begin(), x.shape().end());
  return x.reshaped(std::move(shape));
}

template <typename Scalar>
void check_label(const Classifier<Scalar>& model, std::uint32_t y) {
  if (y >= model.architecture().n_classes) {
    throw DimensionError("label " + std::to_string(y) + " out of range for " +
                         std::to_string(model.architecture().n_classes) + " classes");
  }
}

/// J(x, y) with the graph retained for a later backward pass.
template <typename Scalar>
struct LossEvaluation {
  Scalar loss{};
  Graph<Scalar> graph;
  NodeId input;
  NodeId root;
  std::vector<NodeId> params;
};

template <typename Scalar>
LossEvaluation<Scalar> eval_loss(const Classifier<Scalar>& model, const Tensor<Scalar>& x,
                                 std::uint32_t y, bool params_require_grad = false) {
  check_label(model, y);
  LossEvaluation<Scalar> out;
  out.input = out.graph.leaf(as_batch(model, x), true);
  out.params = model.bind(out.graph, params_require_grad);
  const NodeId logits = model.forward(out.graph, out.input, out.params);
  const std::uint32_t labels[] = {y};
  out.root = out.graph.softmax_cross_entropy(logits, labels);
  out.loss = out.graph.value(out.root).item();
  return out;
}

/// Cross-entropy gradient with respect to the input image. Parameters are
/// bound as constants, so no weight gradients are formed.
template <typename Scalar>
Tensor<Scalar> grad_input(const Classifier<Scalar>& model, const Tensor<Scalar>& x,
                          std::uint32_t y) {
  auto eval = eval_loss(model, x, y);
  eval.graph.backward(eval.root);
  return eval.graph.grad(eval.input).reshaped(x.shape());
}

template <typename Scalar>
struct ParameterGradients {
  Scalar loss{};
  std::vector<Tensor<Scalar>> grads;
};

/// Mean cross-entropy over a batch and its gradient with respect to every
/// parameter tensor.
template <typename Scalar>
ParameterGradients<Scalar> grad_params(const Classifier<Scalar>& model,
                                       std::span<const Tensor<Scalar>> images,
                                       std::span<const std::uint32_t> labels) {
  if (images.empty()) throw UsageError("grad_params: empty batch");
  if (images.size() != labels.size()) {
    throw DimensionError("grad_params: " + std::to_string(images.size()) + " images, " +
                         std::to_string(labels.size()) + " labels");
  }
  const auto& in_shape = model.architecture().input_shape;
  const Index per = shape_size(in_shape);
  Shape shape{static_cast<Index>(images.size())};
  shape.insert(shape.end(), in_shape.begin(), in_shape.end());
  Tensor<Scalar> batch(shape);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != in_shape) {
      throw DimensionError("grad_params: image " + std::to_string(i) + " has shape " +
                           shape_string(images[i].shape()));
    }
    check_label(model, labels[i]);
    batch.data().segment(static_cast<Index>(i) * per, per) = images[i].data();
  }
  Graph<Scalar> g;
  const auto params = model.bind(g, true);
  const NodeId logits = model.forward(g, g.leaf(std::move(batch), false), params);
  const NodeId root = g.softmax_cross_entropy(logits, labels);
  g.backward(root);
  ParameterGradients<Scalar> out;
  out.loss = g.value(root).item();
  for (const auto id : params) out.grads.push_back(g.grad(id));
  return out;
}

template <typename Scalar>
std::uint32_t predict(const Classifier<Scalar>& model, const Tensor<Scalar>& x) {
  const auto z = model.logits(as_batch(model, x));
  Index best = 0;
  z.data().maxCoeff(&best);
  return static_cast<std::uint32_t>(best);
}

/// Fraction of `data` classified correctly, evaluated in float.
double accuracy(const Classifier<float>& model, const Dataset& data);

enum class Optimizer : std::uint32_t { Sgd = 0, SgdMomentum = 1 };

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 0.01;
  Optimizer optimizer = Optimizer::SgdMomentum;
  double momentum = 0.9;
  std::uint64_t seed = 1;

  void validate() const;
  std::uint64_t hash() const;
};

/// Mini-batch SGD on cross-entropy; shuffling and initialization both derive
/// from `cfg.seed`. Records train and (if given) test accuracy.
Classifier<float> train(const Architecture& arch, const Dataset& data, const TrainConfig& cfg,
                        const Dataset* test = nullptr);

// "PGNW" weight file, version 1. All integers little-endian u32 unless noted.
//   "PGNW" | version | name (u32 length + bytes) | input rank | dims... |
//   n_classes | n_layers | (kind, units, kernel) per layer |
//   seed u64 | config hash u64 | train acc f64 | test acc f64 |
//   n_params | per tensor: rank, dims..., f32 values
inline constexpr std::uint32_t kWeightsVersion = 1;

std::string encode_weights(const Classifier<float>& model);
Classifier<float> decode_weights(std::string_view bytes);
void save(const Classifier<float>& model, const std::string& path);
Classifier<float> load(const std::string& path);

}  // namespace pgn
