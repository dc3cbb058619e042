// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pusnet/planes.hpp"

namespace pusnet {

/// Clamp to [0, 1], scale to 8 bits, round half away from zero, scale back.
ImagePlane quantize(const ImagePlane& image);

/// Decodes any raster format the image codec understands into RGB planes in [0, 1].
ImagePlane read_image(const std::filesystem::path& path);
/// Writes an 8-bit RGB PNG of the quantized image.
void write_png(const std::filesystem::path& path, const ImagePlane& image);

ImagePlane resize_bilinear(const ImagePlane& image, Index height, Index width);
ImagePlane crop(const ImagePlane& image, Index top, Index left, Index height, Index width);
ImagePlane flip_horizontal(const ImagePlane& image);
ImagePlane flip_vertical(const ImagePlane& image);

struct ManifestEntry {
  std::string id;  // file name relative to the manifest directory
  int width = 0;
  int height = 0;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::filesystem::path directory;
  std::string split;
  std::vector<ManifestEntry> entries;
  std::size_t skipped = 0;  // files that failed to decode

  std::filesystem::path path_of(const ManifestEntry& e) const { return directory / e.id; }
  bool operator==(const DatasetManifest& o) const {
    return directory == o.directory && split == o.split && entries == o.entries;
  }
};

/// Indexes `root/split` when that directory exists, otherwise `root`.
/// Entries are sorted by id; undecodable files are skipped and counted.
DatasetManifest index_dataset(const std::filesystem::path& root, const std::string& split);

/// Line-oriented cache: a header line "# <directory> <split>" followed by
/// "id width height" rows.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// One training batch: the first half of the patches are covers, the second
/// half secrets (cover i pairs with secret i); all patches double as clean
/// denoising targets, and `noisy` holds their noise-corrupted versions.
template <typename Scalar>
struct BatchOf {
  std::vector<Planes<Scalar>> covers, secrets, clean, noisy;
};
using TrainBatch = BatchOf<float>;

struct SamplerOptions {
  int batch = 8;
  int crop = 256;
  double noise_sigma = 20.0;  // 8-bit units
  std::uint64_t seed = 0;
  bool cache_images = true;
};

/// Random crops with independent horizontal/vertical flips. Holds private RNG
/// state; not for concurrent use.
class PatchSampler {
 public:
  PatchSampler(DatasetManifest manifest, SamplerOptions options);

  TrainBatch next();
  const DatasetManifest& manifest() const { return manifest_; }

 private:
  const ImagePlane& image(std::size_t index);

  DatasetManifest manifest_;
  SamplerOptions options_;
  std::mt19937_64 rng_;
  std::vector<std::optional<ImagePlane>> cache_;
  ImagePlane scratch_;
};

}  // namespace pusnet
