// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "pusnet/container.hpp"
#include "pusnet/errors.hpp"
#include "pusnet/datapipe.hpp"
#include "pusnet/keymat.hpp"
#include "pusnet/network_spec.hpp"
#include "pusnet/parameter_store.hpp"
#include "pusnet/sparsity.hpp"

namespace pusnet {

struct TrainConfig {
  NetworkSpec spec;
  double lambda_emb = 1.0;
  double lambda_rec = 0.75;
  double lambda_den = 0.25;
  double lr0 = 1e-4;
  int halve_every = 500;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int batch = 8;
  int crop = 256;
  double noise_sigma = 20.0;  // 8-bit units
  double keep_ratio = 0.9;
  int iterations = 3000;
  std::uint64_t w0_seed = 1;
  std::uint64_t data_seed = 2;
  Key encoder_key;
  Key decoder_key;
  int checkpoint_every = 0;  // 0 disables checkpoints
  std::filesystem::path checkpoint_path;
  std::filesystem::path dataset;
  std::string split = "train";
  bool deterministic = false;  // fixed container timestamp

  void validate() const;
};

/// Parses "key = value" lines ('#' starts a comment). Unknown keys are errors.
/// Keys for the hidden networks are never read from files.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);

/// x + n with n ~ N(0, (sigma/255)^2) per value, not clamped.
template <typename Urbg>
ImagePlane add_gaussian_noise(const ImagePlane& clean, double sigma, Urbg& rng) {
  if (sigma < 0.0) throw ValidationError("noise sigma must be non-negative");
  ImagePlane noisy = clean;
  if (sigma == 0.0) return noisy;
  std::normal_distribution<double> normal(0.0, sigma / 255.0);
  for (Index i = 0; i < noisy.values.size(); ++i) {
    noisy.values.data()[i] = static_cast<float>(noisy.values.data()[i] + normal(rng));
  }
  return noisy;
}

/// lr0 * 2^-floor(iteration / halve_every).
double lr_at(int iteration, const TrainConfig& config);

struct LossTriple {
  double embed = 0.0;
  double recover = 0.0;
  double denoise = 0.0;
};

/// Mean squared error over every value of a batch of planes.
template <typename Scalar>
double batch_mse(const std::vector<Planes<Scalar>>& a, const std::vector<Planes<Scalar>>& b);

/// (MSE(stego, cover), MSE(recovered, secret), MSE(denoised, clean)).
template <typename Scalar>
LossTriple compute_losses(const std::vector<Planes<Scalar>>& stego, const std::vector<Planes<Scalar>>& cover,
                          const std::vector<Planes<Scalar>>& recovered, const std::vector<Planes<Scalar>>& secret,
                          const std::vector<Planes<Scalar>>& denoised, const std::vector<Planes<Scalar>>& clean);

struct LossWeights {
  double embed = 1.0;
  double recover = 0.75;
  double denoise = 0.25;
};

/// Runs the three forwards (denoise with zero holes, encode with the
/// encoder fill, decode of the produced stego with the decoder fill) and
/// returns the losses together with the weighted gradient with respect to
/// the shared set. Gradient entries at holes are zero. Passes whose weight
/// is zero are skipped and report NaN.
template <typename Scalar>
LossTriple joint_gradient(const ParameterStore<Scalar>& purified, const SparseMask& mask,
                          const FillWeights& encoder_fill, const FillWeights& decoder_fill,
                          const BatchOf<Scalar>& batch, const LossWeights& weights, Vector<Scalar>& grad);

struct TrainState {
  ParameterStore<float> purified;  // zeros at holes
  SparseMask mask;
  FillWeights encoder_fill;
  FillWeights decoder_fill;
  std::vector<std::uint8_t> shared;
  Vector<float> first_moment;
  Vector<float> second_moment;
  int iteration = 0;
};

/// init_weights(w0_seed) -> generate_mask(S) -> zero the holes -> synthesize fills.
TrainState make_train_state(const TrainConfig& config);

struct StepResult {
  LossTriple losses;
  double lr = 0.0;
};

/// One masked adaptive-moment update of the shared set. Throws RuntimeError
/// on a non-finite loss.
StepResult train_step(TrainState& state, const TrainBatch& batch, const TrainConfig& config);

ModelContainer make_container(const TrainState& state, const TrainConfig& config);

using StepObserver = std::function<void(int iteration, const StepResult&)>;

/// Full training run. `metrics_log`, when given, receives one
/// "iteration embed recover denoise lr" line per step.
ModelContainer train(const TrainConfig& config, const DatasetManifest& dataset, std::ostream* metrics_log = nullptr,
                     const StepObserver& observer = {});

}  // namespace pusnet
