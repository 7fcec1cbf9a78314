#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pgn/tensor.hpp"

namespace pgn {

enum class Split : std::uint8_t { Train, Test };

/// Labelled images with pixel values in [0, 1], each of shape H x W x C.
struct Dataset {
  Shape image_shape;
  std::vector<Tensor<float>> images;
  std::vector<std::uint32_t> labels;
  std::uint32_t n_classes = 0;
  Split split = Split::Train;

  std::size_t size() const noexcept { return images.size(); }

  /// Throws ConsistencyError when any invariant (pixel range, label range,
  /// matching counts and shapes) is violated.
  void validate() const;

  /// First `n` examples, same split and class count.
  Dataset head(std::size_t n) const;
};

/// Template of class `label` for the synthetic generator: an oriented
/// cosine grating. Class k uses orientation pi*k/n_classes and phase
/// pi*k/2, so every class differs from every other in orientation.
Tensor<float> synthetic_template(std::uint32_t label, std::uint32_t n_classes, Index side);

/// `n_per_class` samples per class, class-interleaved (example i has label
/// i % n_classes), each its template plus N(0, noise_sd^2) pixel noise
/// clamped to [0, 1]. Bit-reproducible from `seed`.
Dataset gen_synthetic(std::uint32_t n_classes, Index side, std::size_t n_per_class,
                      double noise_sd, std::uint64_t seed, Split split = Split::Train);

// IDX container: big-endian magic 0x00000803 (images, N x H x W unsigned
// bytes) or 0x00000801 (labels, N unsigned bytes), big-endian u32 sizes,
// then the raw payload.
inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

Dataset parse_idx(std::string_view image_bytes, std::string_view label_bytes,
                  Split split = Split::Train);
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 Split split = Split::Train);

/// Pixels are quantized with round(p * 255); datasets loaded from IDX
/// therefore write back byte-for-byte. Requires single-channel images.
std::string encode_idx_images(const Dataset& data);
std::string encode_idx_labels(const Dataset& data);
void write_idx(const Dataset& data, const std::string& images_path,
               const std::string& labels_path);

}  // namespace pgn
