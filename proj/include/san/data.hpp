#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "san/tensor.hpp"

namespace san {

// Images in raw pixel units (0..255), CHW per image, row-major.
struct Dataset {
  Index channels = 3;
  Index height = 0;
  Index width = 0;
  Index classes = 10;
  std::vector<float> pixels;
  std::vector<int> labels;

  Index size() const { return static_cast<Index>(labels.size()); }
  Index image_numel() const { return channels * height * width; }
  std::span<const float> image(Index i) const;
  std::span<float> image(Index i);
  Dataset subset(std::span<const Index> indices) const;
};

// CIFAR-10 binary layout: records of 1 label byte + 3072 pixel bytes
// (1024 R, 1024 G, 1024 B). `limit` < 0 reads everything.
Dataset read_cifar10_records(const std::filesystem::path& file, Index limit = -1);
// data_batch_1..5.bin (train) or test_batch.bin from a cifar-10-batches-bin
// directory, or from its parent.
Dataset load_cifar10(const std::filesystem::path& root, bool train, Index limit = -1);

struct SyntheticSpec {
  Index count = 2000;
  Index classes = 10;
  Index size = 16;
  double noise = 40.0;  // per-pixel Gaussian sigma, pixel units
  int max_shift = 2;    // random translation of the class pattern
  std::uint64_t seed = 0;
  // Class patterns depend only on this, so train and val sets drawn with
  // different `seed` share classes.
  std::uint64_t pattern_seed = 1234;
};

// Each class is a fixed arrangement of coloured Gaussian blobs; samples are
// shifted, noisy, clamped and quantized renderings of it.
Dataset make_synthetic_blobs(const SyntheticSpec& spec);

// Seeded permutation of [0, n).
std::vector<Index> shuffled_indices(Index n, std::uint64_t seed);

struct Normalization {
  std::vector<float> mean;
  std::vector<float> stddev;

  static Normalization fit(const Dataset& d);
  nlohmann::json to_json() const;
  static Normalization from_json(const nlohmann::json& j);
};

// Pad by `pad` zero pixels, crop back to size at a random offset, then flip
// horizontally with probability 1/2. Operates on one raw CHW image.
void augment(std::span<float> image, Index channels, Index height, Index width, std::mt19937_64& rng, int pad = 4);

void horizontal_flip(std::span<float> image, Index channels, Index height, Index width);

// Normalized [B, C, H, W] batch of the listed images.
Tensor<float> make_batch(const Dataset& d, std::span<const Index> indices, const Normalization& norm);
Tensor<float> normalize_images(std::span<const float> raw, Index batch, const Dataset& shape_of,
                               const Normalization& norm);

}  // namespace san
