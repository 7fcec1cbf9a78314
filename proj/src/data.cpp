#include "pgn/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "pgn/io.hpp"
#include "pgn/random.hpp"

namespace pgn {

namespace {

constexpr double kTemplateMean = 0.5;
constexpr double kTemplateContrast = 0.07;
constexpr double kTemplateCycles = 2.0;

std::string hex_magic(std::uint32_t v) {
  char buf[11];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

}  // namespace

void Dataset::validate() const {
  if (labels.size() != images.size()) {
    throw ConsistencyError(std::to_string(images.size()) + " images but " +
                           std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != image_shape) {
      throw ConsistencyError("image " + std::to_string(i) + " has shape " +
                             shape_string(images[i].shape()) + ", expected " +
                             shape_string(image_shape));
    }
    const auto& px = images[i].data();
    if (px.size() > 0 && (px.minCoeff() < 0.0f || px.maxCoeff() > 1.0f)) {
      throw ConsistencyError("image " + std::to_string(i) + " has pixels outside [0,1]");
    }
    if (labels[i] >= n_classes) {
      throw ConsistencyError("label " + std::to_string(labels[i]) + " of example " +
                             std::to_string(i) + " >= n_classes " + std::to_string(n_classes));
    }
  }
}

Dataset Dataset::head(std::size_t n) const {
  Dataset out{image_shape, {}, {}, n_classes, split};
  n = std::min(n, size());
  out.images.assign(images.begin(), images.begin() + static_cast<std::ptrdiff_t>(n));
  out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

Tensor<float> synthetic_template(std::uint32_t label, std::uint32_t n_classes, Index side) {
  const double theta = std::numbers::pi * label / n_classes;
  const double phase = std::numbers::pi * label / 2.0;
  Tensor<float> t(Shape{side, side, 1});
  for (Index r = 0; r < side; ++r) {
    for (Index c = 0; c < side; ++c) {
      const double u = (static_cast<double>(c) + 0.5) / static_cast<double>(side);
      const double v = (static_cast<double>(r) + 0.5) / static_cast<double>(side);
      const double arg =
          2.0 * std::numbers::pi * kTemplateCycles * (u * std::cos(theta) + v * std::sin(theta));
      t.data()[r * side + c] =
          static_cast<float>(kTemplateMean + kTemplateContrast * std::cos(arg + phase));
    }
  }
  return t;
}

Dataset gen_synthetic(std::uint32_t n_classes, Index side, std::size_t n_per_class,
                      double noise_sd, std::uint64_t seed, Split split) {
  if (n_classes < 2) throw UsageError("gen_synthetic: n_classes must be >= 2");
  if (side < 8) throw UsageError("gen_synthetic: side must be >= 8");
  if (!(noise_sd >= 0.0)) throw UsageError("gen_synthetic: noise_sd must be >= 0");

  std::vector<Tensor<float>> templates;
  for (std::uint32_t k = 0; k < n_classes; ++k) {
    templates.push_back(synthetic_template(k, n_classes, side));
  }

  Dataset out{Shape{side, side, 1}, {}, {}, n_classes, split};
  const std::size_t total = n_per_class * n_classes;
  out.images.reserve(total);
  out.labels.reserve(total);
  Rng rng(mix_seed(seed));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < total; ++i) {
    const auto label = static_cast<std::uint32_t>(i % n_classes);
    Tensor<float> img = templates[label];
    if (noise_sd > 0.0) {
      for (Index p = 0; p < img.size(); ++p) {
        const double v = img.data()[p] + noise_sd * noise(rng);
        img.data()[p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
    out.images.push_back(std::move(img));
    out.labels.push_back(label);
  }
  return out;
}

Dataset parse_idx(std::string_view image_bytes, std::string_view label_bytes, Split split) {
  io::ByteReader images(image_bytes, io::Endian::Big, "idx images");
  const std::uint32_t image_magic = images.u32();
  if (image_magic != kIdxImageMagic) {
    throw FormatError("idx images: expected magic " + hex_magic(kIdxImageMagic) + ", got " +
                      hex_magic(image_magic));
  }
  const std::uint32_t count = images.u32();
  const std::uint32_t rows = images.u32();
  const std::uint32_t cols = images.u32();

  io::ByteReader labels(label_bytes, io::Endian::Big, "idx labels");
  const std::uint32_t label_magic = labels.u32();
  if (label_magic != kIdxLabelMagic) {
    throw FormatError("idx labels: expected magic " + hex_magic(kIdxLabelMagic) + ", got " +
                      hex_magic(label_magic));
  }
  const std::uint32_t label_count = labels.u32();
  if (label_count != count) {
    throw ConsistencyError("idx: " + std::to_string(count) + " images but " +
                           std::to_string(label_count) + " labels");
  }

  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  if (count != 0 && pixels > images.remaining() / count) {
    throw LengthError("idx images: header declares " + std::to_string(count) + " x " +
                      std::to_string(rows) + " x " + std::to_string(cols) + " pixels, only " +
                      std::to_string(images.remaining()) + " bytes remain");
  }
  images.require(pixels * count);
  labels.require(count);
  if (images.remaining() != pixels * count) throw FormatError("idx images: trailing bytes");
  if (labels.remaining() != count) throw FormatError("idx labels: trailing bytes");

  Dataset out{Shape{rows, cols, 1}, {}, {}, 0, split};
  out.images.reserve(count);
  out.labels.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto raw = images.bytes(pixels);
    Tensor<float> img(out.image_shape);
    for (std::size_t p = 0; p < pixels; ++p) {
      img.data()[static_cast<Index>(p)] = static_cast<unsigned char>(raw[p]) / 255.0f;
    }
    out.images.push_back(std::move(img));
    const std::uint32_t label = labels.u8();
    out.labels.push_back(label);
    out.n_classes = std::max(out.n_classes, label + 1);
  }
  return out;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path, Split split) {
  const std::string image_bytes = io::read_file(images_path);
  const std::string label_bytes = io::read_file(labels_path);
  try {
    return parse_idx(image_bytes, label_bytes, split);
  } catch (const Error& e) {
    // Surface which file pair was being parsed; keep the error category.
    const std::string where = " (" + images_path + ", " + labels_path + ")";
    if (e.code() == "format") throw FormatError(e.what() + where);
    if (e.code() == "length") throw LengthError(e.what() + where);
    if (e.code() == "consistency") throw ConsistencyError(e.what() + where);
    throw;
  }
}

std::string encode_idx_images(const Dataset& data) {
  if (data.image_shape.size() != 3 || data.image_shape[2] != 1) {
    throw UsageError("idx writer needs single-channel images, got shape " +
                     shape_string(data.image_shape));
  }
  io::ByteWriter w(io::Endian::Big);
  w.u32(kIdxImageMagic);
  w.u32(static_cast<std::uint32_t>(data.size()));
  w.u32(static_cast<std::uint32_t>(data.image_shape[0]));
  w.u32(static_cast<std::uint32_t>(data.image_shape[1]));
  for (const auto& img : data.images) {
    for (Index p = 0; p < img.size(); ++p) {
      const float v = std::clamp(img.data()[p], 0.0f, 1.0f);
      w.u8(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
    }
  }
  return w.take();
}

std::string encode_idx_labels(const Dataset& data) {
  io::ByteWriter w(io::Endian::Big);
  w.u32(kIdxLabelMagic);
  w.u32(static_cast<std::uint32_t>(data.size()));
  for (auto label : data.labels) {
    if (label > 255) throw UsageError("idx labels must fit in one byte");
    w.u8(static_cast<std::uint8_t>(label));
  }
  return w.take();
}

void write_idx(const Dataset& data, const std::string& images_path,
               const std::string& labels_path) {
  io::write_file(images_path, encode_idx_images(data));
  io::write_file(labels_path, encode_idx_labels(data));
}

}  // namespace pgn
