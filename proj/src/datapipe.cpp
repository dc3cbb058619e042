// SPDX-License-Identifier: Apache-2.0
#include "pusnet/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "pusnet/errors.hpp"
#include "pusnet/trainer.hpp"

namespace pusnet {

namespace {

ImagePlane from_mat(const cv::Mat& bgr) {
  ImagePlane image(3, bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      for (int c = 0; c < 3; ++c) image.at(c, y, x) = static_cast<float>(row[x][2 - c]) / 255.0f;
    }
  }
  return image;
}

cv::Mat to_mat(const ImagePlane& image) {
  if (image.channels() != 3) throw ValidationError("only 3-channel images can be encoded");
  cv::Mat bgr(static_cast<int>(image.height), static_cast<int>(image.width), CV_8UC3);
  const ImagePlane q = quantize(image);
  for (int y = 0; y < bgr.rows; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      for (int c = 0; c < 3; ++c) row[x][2 - c] = static_cast<unsigned char>(std::lround(q.at(c, y, x) * 255.0f));
    }
  }
  return bgr;
}

cv::Mat to_float_mat(const ImagePlane& image) {
  cv::Mat out(static_cast<int>(image.height), static_cast<int>(image.width), CV_32FC3);
  for (int y = 0; y < out.rows; ++y) {
    auto* row = out.ptr<cv::Vec3f>(y);
    for (int x = 0; x < out.cols; ++x) {
      for (int c = 0; c < 3; ++c) row[x][c] = image.at(c, y, x);
    }
  }
  return out;
}

}  // namespace

ImagePlane quantize(const ImagePlane& image) {
  ImagePlane out = image;
  out.values = image.values.unaryExpr([](float v) {
    const double clamped = std::clamp(static_cast<double>(v), 0.0, 1.0);
    return static_cast<float>(std::round(clamped * 255.0) / 255.0);
  });
  return out;
}

ImagePlane read_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw RuntimeError("cannot decode image " + path.string());
  return from_mat(bgr);
}

void write_png(const std::filesystem::path& path, const ImagePlane& image) {
  if (!cv::imwrite(path.string(), to_mat(image), {cv::IMWRITE_PNG_COMPRESSION, 6})) {
    throw RuntimeError("cannot write PNG " + path.string());
  }
}

ImagePlane resize_bilinear(const ImagePlane& image, Index height, Index width) {
  if (height <= 0 || width <= 0) throw ValidationError("resize target must be positive");
  if (image.height == height && image.width == width) return image;
  cv::Mat resized;
  cv::resize(to_float_mat(image), resized, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0,
             cv::INTER_LINEAR);
  ImagePlane out(3, height, width);
  for (int y = 0; y < resized.rows; ++y) {
    const auto* row = resized.ptr<cv::Vec3f>(y);
    for (int x = 0; x < resized.cols; ++x) {
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = row[x][c];
    }
  }
  return out;
}

ImagePlane crop(const ImagePlane& image, Index top, Index left, Index height, Index width) {
  if (top < 0 || left < 0 || top + height > image.height || left + width > image.width) {
    throw ValidationError("crop window exceeds the image");
  }
  ImagePlane out(image.channels(), height, width);
  for (Index c = 0; c < image.channels(); ++c) {
    for (Index y = 0; y < height; ++y) {
      for (Index x = 0; x < width; ++x) out.at(c, y, x) = image.at(c, top + y, left + x);
    }
  }
  return out;
}

ImagePlane flip_horizontal(const ImagePlane& image) {
  ImagePlane out(image.channels(), image.height, image.width);
  for (Index c = 0; c < image.channels(); ++c) {
    for (Index y = 0; y < image.height; ++y) {
      for (Index x = 0; x < image.width; ++x) out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
    }
  }
  return out;
}

ImagePlane flip_vertical(const ImagePlane& image) {
  ImagePlane out(image.channels(), image.height, image.width);
  for (Index c = 0; c < image.channels(); ++c) {
    for (Index y = 0; y < image.height; ++y) {
      out.values.row(c).segment(y * image.width, image.width) =
          image.values.row(c).segment((image.height - 1 - y) * image.width, image.width);
    }
  }
  return out;
}

DatasetManifest index_dataset(const std::filesystem::path& root, const std::string& split) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw ValidationError("dataset root " + root.string() + " is not a directory");
  DatasetManifest manifest;
  manifest.split = split;
  manifest.directory = (!split.empty() && fs::is_directory(root / split)) ? root / split : root;

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(manifest.directory)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    cv::Mat img = cv::imread(file.string(), cv::IMREAD_COLOR);
    if (img.empty()) {
      ++manifest.skipped;
      continue;
    }
    manifest.entries.push_back(ManifestEntry{file.filename().string(), img.cols, img.rows});
  }
  if (manifest.entries.empty()) {
    throw ValidationError("no decodable images under " + manifest.directory.string());
  }
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("cannot write manifest " + path.string());
  out << "# " << manifest.directory.string() << ' ' << (manifest.split.empty() ? "-" : manifest.split) << '\n';
  for (const auto& e : manifest.entries) out << e.id << ' ' << e.width << ' ' << e.height << '\n';
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeError("cannot read manifest " + path.string());
  DatasetManifest manifest;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) throw ValidationError("manifest header missing");
  {
    std::istringstream header(line.substr(2));
    std::string dir;
    header >> dir >> manifest.split;
    if (manifest.split == "-") manifest.split.clear();
    manifest.directory = dir;
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    ManifestEntry e;
    if (!(row >> e.id >> e.width >> e.height)) throw ValidationError("malformed manifest row: " + line);
    manifest.entries.push_back(e);
  }
  if (manifest.entries.empty()) throw ValidationError("manifest lists no images");
  return manifest;
}

PatchSampler::PatchSampler(DatasetManifest manifest, SamplerOptions options)
    : manifest_(std::move(manifest)), options_(options), rng_(options.seed) {
  if (manifest_.entries.empty()) throw ValidationError("sampler needs a non-empty manifest");
  if (options_.batch < 2 || options_.batch % 2 != 0) throw ValidationError("batch must be a positive even count");
  if (options_.crop <= 0) throw ValidationError("crop size must be positive");
  for (const auto& e : manifest_.entries) {
    if (e.width < options_.crop || e.height < options_.crop) {
      throw ValidationError("image " + e.id + " is smaller than the " + std::to_string(options_.crop) + " px crop");
    }
  }
  cache_.resize(manifest_.entries.size());
}

const ImagePlane& PatchSampler::image(std::size_t index) {
  if (options_.cache_images) {
    if (!cache_[index]) cache_[index] = read_image(manifest_.path_of(manifest_.entries[index]));
    return *cache_[index];
  }
  scratch_ = read_image(manifest_.path_of(manifest_.entries[index]));
  return scratch_;
}

TrainBatch PatchSampler::next() {
  const auto batch = static_cast<std::size_t>(options_.batch);
  std::vector<std::size_t> picks(manifest_.entries.size());
  std::iota(picks.begin(), picks.end(), std::size_t{0});
  if (picks.size() >= batch) {
    std::shuffle(picks.begin(), picks.end(), rng_);
    picks.resize(batch);
  } else {
    std::uniform_int_distribution<std::size_t> any(0, picks.size() - 1);
    std::vector<std::size_t> drawn(batch);
    for (auto& d : drawn) d = any(rng_);
    picks = std::move(drawn);
  }

  TrainBatch out;
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < batch; ++i) {
    const ImagePlane& source = image(picks[i]);
    std::uniform_int_distribution<Index> top(0, source.height - options_.crop);
    std::uniform_int_distribution<Index> left(0, source.width - options_.crop);
    const Index t = top(rng_);
    const Index l = left(rng_);
    ImagePlane patch = crop(source, t, l, options_.crop, options_.crop);
    if (coin(rng_)) patch = flip_horizontal(patch);
    if (coin(rng_)) patch = flip_vertical(patch);
    out.clean.push_back(std::move(patch));
  }
  for (std::size_t i = 0; i < batch; ++i) {
    (i < batch / 2 ? out.covers : out.secrets).push_back(out.clean[i]);
    out.noisy.push_back(add_gaussian_noise(out.clean[i], options_.noise_sigma, rng_));
  }
  return out;
}

}  // namespace pusnet
