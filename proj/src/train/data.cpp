#include "san/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "san/errors.hpp"

namespace san {

std::span<const float> Dataset::image(Index i) const {
  return std::span<const float>(pixels).subspan(static_cast<std::size_t>(i * image_numel()),
                                                static_cast<std::size_t>(image_numel()));
}

std::span<float> Dataset::image(Index i) {
  return std::span<float>(pixels).subspan(static_cast<std::size_t>(i * image_numel()),
                                          static_cast<std::size_t>(image_numel()));
}

Dataset Dataset::subset(std::span<const Index> indices) const {
  Dataset out{channels, height, width, classes, {}, {}};
  out.pixels.reserve(indices.size() * static_cast<std::size_t>(image_numel()));
  for (Index i : indices) {
    if (i < 0 || i >= size()) throw DimensionError("dataset index " + std::to_string(i) + " out of range");
    const auto img = image(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
    out.labels.push_back(labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

Dataset read_cifar10_records(const std::filesystem::path& file, Index limit) {
  constexpr std::size_t kRecord = 3073;
  std::ifstream is(file, std::ios::binary);
  if (!is) throw FormatError("cannot open CIFAR-10 file " + file.string());
  is.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(is.tellg());
  is.seekg(0);
  if (bytes == 0 || bytes % kRecord != 0) {
    throw FormatError(file.string() + ": size " + std::to_string(bytes) + " is not a multiple of 3073-byte records");
  }
  Index count = static_cast<Index>(bytes / kRecord);
  if (limit >= 0) count = std::min(count, limit);
  Dataset d{3, 32, 32, 10, {}, {}};
  d.pixels.reserve(static_cast<std::size_t>(count) * 3072);
  std::vector<unsigned char> record(kRecord);
  for (Index r = 0; r < count; ++r) {
    if (!is.read(reinterpret_cast<char*>(record.data()), kRecord)) throw FormatError(file.string() + ": truncated");
    if (record[0] > 9) throw FormatError(file.string() + ": label " + std::to_string(record[0]) + " out of range");
    d.labels.push_back(record[0]);
    for (std::size_t i = 1; i < kRecord; ++i) d.pixels.push_back(static_cast<float>(record[i]));
  }
  return d;
}

Dataset load_cifar10(const std::filesystem::path& root, bool train, Index limit) {
  std::filesystem::path dir = root;
  if (!std::filesystem::exists(dir / "test_batch.bin") && std::filesystem::exists(root / "cifar-10-batches-bin")) {
    dir = root / "cifar-10-batches-bin";
  }
  std::vector<std::filesystem::path> files;
  if (train) {
    for (int b = 1; b <= 5; ++b) files.push_back(dir / ("data_batch_" + std::to_string(b) + ".bin"));
  } else {
    files.push_back(dir / "test_batch.bin");
  }
  Dataset out{3, 32, 32, 10, {}, {}};
  for (const auto& f : files) {
    if (limit >= 0 && out.size() >= limit) break;
    if (!std::filesystem::exists(f)) throw FormatError("CIFAR-10 file missing: " + f.string());
    Dataset part = read_cifar10_records(f, limit < 0 ? -1 : limit - out.size());
    out.pixels.insert(out.pixels.end(), part.pixels.begin(), part.pixels.end());
    out.labels.insert(out.labels.end(), part.labels.begin(), part.labels.end());
  }
  return out;
}

Dataset make_synthetic_blobs(const SyntheticSpec& spec) {
  if (spec.count < 0 || spec.classes < 2 || spec.size < 4) throw ConfigError("synthetic dataset: invalid extents");
  struct Blob {
    double cy, cx, sigma;
    std::array<double, 3> colour;
  };
  constexpr int kBlobs = 3;
  const Index s = spec.size;
  std::mt19937_64 pattern_rng(spec.pattern_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<Blob>> patterns(static_cast<std::size_t>(spec.classes));
  for (auto& pattern : patterns) {
    for (int b = 0; b < kBlobs; ++b) {
      Blob blob{};
      blob.cy = (0.2 + 0.6 * unit(pattern_rng)) * static_cast<double>(s);
      blob.cx = (0.2 + 0.6 * unit(pattern_rng)) * static_cast<double>(s);
      blob.sigma = (0.08 + 0.1 * unit(pattern_rng)) * static_cast<double>(s);
      for (double& c : blob.colour) c = 110.0 * (2.0 * unit(pattern_rng) - 1.0);
      pattern.push_back(blob);
    }
  }

  Dataset d{3, s, s, spec.classes, {}, {}};
  d.pixels.resize(static_cast<std::size_t>(spec.count * 3 * s * s));
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.noise);
  std::uniform_int_distribution<int> shift(-spec.max_shift, spec.max_shift);
  std::uniform_int_distribution<int> label_dist(0, static_cast<int>(spec.classes) - 1);
  for (Index i = 0; i < spec.count; ++i) {
    const int label = label_dist(rng);
    const int dy = shift(rng), dx = shift(rng);
    d.labels.push_back(label);
    auto img = d.image(i);
    for (Index c = 0; c < 3; ++c)
      for (Index y = 0; y < s; ++y)
        for (Index x = 0; x < s; ++x) {
          double v = 128.0;
          for (const Blob& b : patterns[static_cast<std::size_t>(label)]) {
            const double ry = static_cast<double>(y) - (b.cy + dy), rx = static_cast<double>(x) - (b.cx + dx);
            v += b.colour[static_cast<std::size_t>(c)] * std::exp(-(ry * ry + rx * rx) / (2 * b.sigma * b.sigma));
          }
          v += noise(rng);
          img[static_cast<std::size_t>((c * s + y) * s + x)] = static_cast<float>(std::round(std::clamp(v, 0.0, 255.0)));
        }
  }
  return d;
}

std::vector<Index> shuffled_indices(Index n, std::uint64_t seed) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

Normalization Normalization::fit(const Dataset& d) {
  if (d.size() == 0) throw ConfigError("cannot fit normalization on an empty dataset");
  Normalization n;
  const Index plane = d.height * d.width;
  for (Index c = 0; c < d.channels; ++c) {
    double sum = 0, sq = 0;
    for (Index i = 0; i < d.size(); ++i) {
      const auto img = d.image(i);
      for (Index p = 0; p < plane; ++p) {
        const double v = img[static_cast<std::size_t>(c * plane + p)];
        sum += v;
        sq += v * v;
      }
    }
    const double count = static_cast<double>(d.size() * plane);
    const double mean = sum / count;
    n.mean.push_back(static_cast<float>(mean));
    n.stddev.push_back(static_cast<float>(std::max(std::sqrt(std::max(sq / count - mean * mean, 0.0)), 1e-3)));
  }
  return n;
}

nlohmann::json Normalization::to_json() const { return {{"mean", mean}, {"std", stddev}}; }

Normalization Normalization::from_json(const nlohmann::json& j) {
  Normalization n;
  n.mean = j.at("mean").get<std::vector<float>>();
  n.stddev = j.at("std").get<std::vector<float>>();
  if (n.mean.size() != n.stddev.size()) throw FormatError("normalization mean/std lengths differ");
  return n;
}

void horizontal_flip(std::span<float> image, Index channels, Index height, Index width) {
  for (Index c = 0; c < channels; ++c)
    for (Index y = 0; y < height; ++y) {
      float* row = image.data() + (c * height + y) * width;
      std::reverse(row, row + width);
    }
}

void augment(std::span<float> image, Index channels, Index height, Index width, std::mt19937_64& rng, int pad) {
  std::uniform_int_distribution<int> offset(0, 2 * pad);
  const int oy = offset(rng) - pad, ox = offset(rng) - pad;
  const bool flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  std::vector<float> src(image.begin(), image.end());
  for (Index c = 0; c < channels; ++c)
    for (Index y = 0; y < height; ++y)
      for (Index x = 0; x < width; ++x) {
        const Index sy = y + oy, sx = x + ox;
        const bool inside = sy >= 0 && sy < height && sx >= 0 && sx < width;
        image[static_cast<std::size_t>((c * height + y) * width + x)] =
            inside ? src[static_cast<std::size_t>((c * height + sy) * width + sx)] : 0.0f;
      }
  if (flip) horizontal_flip(image, channels, height, width);
}

Tensor<float> normalize_images(std::span<const float> raw, Index batch, const Dataset& shape_of,
                               const Normalization& norm) {
  const Index c = shape_of.channels, plane = shape_of.height * shape_of.width;
  if (static_cast<Index>(norm.mean.size()) != c) throw DimensionError("normalization channel count mismatch");
  std::vector<float> v(raw.begin(), raw.end());
  for (Index b = 0; b < batch; ++b)
    for (Index ch = 0; ch < c; ++ch) {
      const float m = norm.mean[static_cast<std::size_t>(ch)], inv = 1.0f / norm.stddev[static_cast<std::size_t>(ch)];
      float* p = v.data() + (b * c + ch) * plane;
      for (Index i = 0; i < plane; ++i) p[i] = (p[i] - m) * inv;
    }
  return Tensor<float>(Shape{batch, c, shape_of.height, shape_of.width}, std::move(v));
}

Tensor<float> make_batch(const Dataset& d, std::span<const Index> indices, const Normalization& norm) {
  std::vector<float> raw;
  raw.reserve(indices.size() * static_cast<std::size_t>(d.image_numel()));
  for (Index i : indices) {
    const auto img = d.image(i);
    raw.insert(raw.end(), img.begin(), img.end());
  }
  return normalize_images(raw, static_cast<Index>(indices.size()), d, norm);
}

}  // namespace san
