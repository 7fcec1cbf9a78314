#include "pgn/models.hpp"

#include <algorithm>
#include <numeric>

#include "pgn/io.hpp"

namespace pgn {

std::vector<Shape> Architecture::parameter_shapes() const {
  if (input_shape.size() != 3) {
    throw DimensionError(name + ": input shape must be H,W,C, got " + shape_string(input_shape));
  }
  std::vector<Shape> out;
  Shape cur = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string where = name + " layer " + std::to_string(i);
    switch (l.kind) {
      case LayerKind::Flatten:
        cur = Shape{shape_size(cur)};
        break;
      case LayerKind::Dense:
        if (cur.size() != 1 || l.units == 0) {
          throw DimensionError(where + ": dense needs flat input, got " + shape_string(cur));
        }
        out.push_back(Shape{l.units, cur[0]});
        out.push_back(Shape{l.units});
        cur = Shape{l.units};
        break;
      case LayerKind::Relu:
        break;
      case LayerKind::Conv2d:
        if (cur.size() != 3 || l.units == 0 || l.kernel % 2 == 0) {
          throw DimensionError(where + ": conv2d needs H,W,C input and odd kernel, got " +
                               shape_string(cur));
        }
        out.push_back(Shape{l.units, l.kernel, l.kernel, cur[2]});
        out.push_back(Shape{l.units});
        cur = Shape{cur[0], cur[1], l.units};
        break;
      case LayerKind::MaxPool2x2:
        if (cur.size() != 3 || cur[0] % 2 != 0 || cur[1] % 2 != 0) {
          throw DimensionError(where + ": max-pool needs even H,W, got " + shape_string(cur));
        }
        cur = Shape{cur[0] / 2, cur[1] / 2, cur[2]};
        break;
      default:
        throw DimensionError(where + ": unknown layer kind");
    }
  }
  if (cur != Shape{n_classes}) {
    throw DimensionError(name + ": output shape " + shape_string(cur) + " != [" +
                         std::to_string(n_classes) + "]");
  }
  return out;
}

Architecture mlp_a(const Shape& input_shape, std::uint32_t n_classes) {
  return {"mlp-a",
          input_shape,
          n_classes,
          {{LayerKind::Flatten}, {LayerKind::Dense, 128}, {LayerKind::Relu},
           {LayerKind::Dense, 64}, {LayerKind::Relu}, {LayerKind::Dense, n_classes}}};
}

Architecture mlp_b(const Shape& input_shape, std::uint32_t n_classes) {
  return {"mlp-b",
          input_shape,
          n_classes,
          {{LayerKind::Flatten}, {LayerKind::Dense, 256}, {LayerKind::Relu},
           {LayerKind::Dense, n_classes}}};
}

Architecture cnn_a(const Shape& input_shape, std::uint32_t n_classes) {
  return {"cnn-a",
          input_shape,
          n_classes,
          {{LayerKind::Conv2d, 8, 3}, {LayerKind::Relu}, {LayerKind::MaxPool2x2},
           {LayerKind::Flatten}, {LayerKind::Dense, n_classes}}};
}

Architecture architecture_by_name(const std::string& name, const Shape& input_shape,
                                  std::uint32_t n_classes) {
  if (name == "mlp-a") return mlp_a(input_shape, n_classes);
  if (name == "mlp-b") return mlp_b(input_shape, n_classes);
  if (name == "cnn-a") return cnn_a(input_shape, n_classes);
  throw UsageError("unknown architecture '" + name + "' (expected mlp-a, mlp-b or cnn-a)");
}

double accuracy(const Classifier<float>& model, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  constexpr std::size_t kChunk = 256;
  const auto& in_shape = model.architecture().input_shape;
  const Index per = shape_size(in_shape);
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, data.size() - start);
    Shape shape{static_cast<Index>(n)};
    shape.insert(shape.end(), in_shape.begin(), in_shape.end());
    Tensor<float> batch(shape);
    for (std::size_t i = 0; i < n; ++i) {
      batch.data().segment(static_cast<Index>(i) * per, per) = data.images[start + i].data();
    }
    const auto z = model.logits(batch);
    const Index classes = z.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
      Index best = 0;
      z.data().segment(static_cast<Index>(i) * classes, classes).maxCoeff(&best);
      if (static_cast<std::uint32_t>(best) == data.labels[start + i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw UsageError("train: batch size must be positive");
  if (!(learning_rate > 0.0)) throw UsageError("train: learning rate must be positive");
  if (optimizer == Optimizer::SgdMomentum && !(momentum > 0.0 && momentum < 1.0)) {
    throw UsageError("train: momentum must be in (0, 1)");
  }
}

std::uint64_t TrainConfig::hash() const {
  io::ByteWriter w(io::Endian::Little);
  w.u64(epochs);
  w.u64(batch_size);
  w.f64(learning_rate);
  w.u32(static_cast<std::uint32_t>(optimizer));
  w.f64(momentum);
  w.u64(seed);
  return io::fnv1a(w.buffer());
}

Classifier<float> train(const Architecture& arch, const Dataset& data, const TrainConfig& cfg,
                        const Dataset* test) {
  cfg.validate();
  if (data.image_shape != arch.input_shape) {
    throw DimensionError("train: " + arch.name + " expects " + shape_string(arch.input_shape) +
                         ", dataset has " + shape_string(data.image_shape));
  }
  if (data.n_classes != arch.n_classes) {
    throw DimensionError("train: " + arch.name + " has " + std::to_string(arch.n_classes) +
                         " outputs, dataset has " + std::to_string(data.n_classes) + " classes");
  }
  auto model = Classifier<float>::initialize(arch, cfg.seed);
  std::vector<Tensor<float>> velocity;
  for (const auto& p : model.parameters()) velocity.emplace_back(p.shape());

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(cfg.seed, 0x5348554646ULL));
  const auto lr = static_cast<float>(cfg.learning_rate);
  const auto mu = static_cast<float>(cfg.momentum);

  std::vector<Tensor<float>> images;
  std::vector<std::uint32_t> labels;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      images.clear();
      labels.clear();
      for (std::size_t i = start; i < end; ++i) {
        images.push_back(data.images[order[i]]);
        labels.push_back(data.labels[order[i]]);
      }
      ParameterGradients<float> step;
      try {
        step = grad_params<float>(model, images, labels);
      } catch (const NumericError& e) {
        throw TrainingError(epoch, e.what());
      }
      if (!std::isfinite(step.loss)) throw TrainingError(epoch, "non-finite loss");
      auto& params = model.parameters();
      for (std::size_t k = 0; k < params.size(); ++k) {
        if (cfg.optimizer == Optimizer::SgdMomentum) {
          velocity[k].data() = mu * velocity[k].data() + step.grads[k].data();
          params[k].data() -= lr * velocity[k].data();
        } else {
          params[k].data() -= lr * step.grads[k].data();
        }
      }
    }
  }
  model.metadata().train_config_hash = cfg.hash();
  model.metadata().train_accuracy = accuracy(model, data);
  model.metadata().test_accuracy = test ? accuracy(model, *test) : 0.0;
  return model;
}

std::string encode_weights(const Classifier<float>& model) {
  const auto& arch = model.architecture();
  io::ByteWriter w(io::Endian::Little);
  w.bytes("PGNW");
  w.u32(kWeightsVersion);
  w.string(arch.name);
  w.u32(static_cast<std::uint32_t>(arch.input_shape.size()));
  for (auto d : arch.input_shape) w.u32(static_cast<std::uint32_t>(d));
  w.u32(arch.n_classes);
  w.u32(static_cast<std::uint32_t>(arch.layers.size()));
  for (const auto& l : arch.layers) {
    w.u32(static_cast<std::uint32_t>(l.kind));
    w.u32(l.units);
    w.u32(l.kernel);
  }
  const auto& meta = model.metadata();
  w.u64(meta.seed);
  w.u64(meta.train_config_hash);
  w.f64(meta.train_accuracy);
  w.f64(meta.test_accuracy);
  w.u32(static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& p : model.parameters()) {
    w.u32(static_cast<std::uint32_t>(p.rank()));
    for (auto d : p.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (Index i = 0; i < p.size(); ++i) w.f32(p.data()[i]);
  }
  return w.take();
}

Classifier<float> decode_weights(std::string_view bytes) {
  io::ByteReader r(bytes, io::Endian::Little, "PGNW");
  const auto magic = r.bytes(4);
  if (magic != "PGNW") throw FormatError("PGNW: bad magic '" + std::string(magic) + "'");
  const auto version = r.u32();
  if (version != kWeightsVersion) {
    throw UnsupportedVersionError("PGNW: unsupported version " + std::to_string(version) +
                                  " (this build reads " + std::to_string(kWeightsVersion) + ")");
  }
  Architecture arch;
  arch.name = r.string();
  const auto rank = r.u32();
  if (rank > 8) throw FormatError("PGNW: implausible input rank " + std::to_string(rank));
  for (std::uint32_t i = 0; i < rank; ++i) arch.input_shape.push_back(r.u32());
  arch.n_classes = r.u32();
  const auto n_layers = r.u32();
  r.require(static_cast<std::size_t>(n_layers) * 12);
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    LayerSpec l;
    const auto kind = r.u32();
    if (kind > static_cast<std::uint32_t>(LayerKind::MaxPool2x2)) {
      throw FormatError("PGNW: unknown layer kind " + std::to_string(kind));
    }
    l.kind = static_cast<LayerKind>(kind);
    l.units = r.u32();
    l.kernel = r.u32();
    arch.layers.push_back(l);
  }
  ModelMetadata meta;
  meta.seed = r.u64();
  meta.train_config_hash = r.u64();
  meta.train_accuracy = r.f64();
  meta.test_accuracy = r.f64();

  std::vector<Shape> expected;
  try {
    expected = arch.parameter_shapes();
  } catch (const DimensionError& e) {
    throw ConsistencyError(std::string("PGNW: invalid descriptor: ") + e.what());
  }
  const auto n_params = r.u32();
  if (n_params != expected.size()) {
    throw ConsistencyError("PGNW: descriptor needs " + std::to_string(expected.size()) +
                           " tensors, file has " + std::to_string(n_params));
  }
  std::vector<Tensor<float>> params;
  for (std::uint32_t k = 0; k < n_params; ++k) {
    const auto prank = r.u32();
    if (prank > 8) throw FormatError("PGNW: implausible tensor rank " + std::to_string(prank));
    r.require(static_cast<std::size_t>(prank) * 4);
    Shape shape;
    for (std::uint32_t i = 0; i < prank; ++i) shape.push_back(r.u32());
    if (shape != expected[k]) {
      throw ConsistencyError("PGNW: tensor " + std::to_string(k) + " has shape " +
                             shape_string(shape) + ", descriptor says " +
                             shape_string(expected[k]));
    }
    std::size_t count = 1;
    for (auto d : shape) {
      const auto dim = static_cast<std::size_t>(d);
      if (dim != 0 && count > r.remaining() / 4 / dim) {
        throw LengthError("PGNW: tensor " + std::to_string(k) + " of shape " +
                          shape_string(shape) + " exceeds the remaining " +
                          std::to_string(r.remaining()) + " bytes");
      }
      count *= dim;
    }
    Tensor<float> p(shape);
    for (Index i = 0; i < p.size(); ++i) p.data()[i] = r.f32();
    params.push_back(std::move(p));
  }
  if (!r.at_end()) throw FormatError("PGNW: trailing bytes after last tensor");
  return Classifier<float>(std::move(arch), std::move(params), meta);
}

void save(const Classifier<float>& model, const std::string& path) {
  io::write_file(path, encode_weights(model));
}

Classifier<float> load(const std::string& path) { return decode_weights(io::read_file(path)); }

}  // namespace pgn
