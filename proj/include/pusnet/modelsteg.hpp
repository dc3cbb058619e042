// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pusnet/container.hpp"
#include "pusnet/keymat.hpp"
#include "pusnet/metrics.hpp"
#include "pusnet/parameter_store.hpp"

namespace pusnet {

/// Exact 1-D Wasserstein-1 distance between two empirical samples: the
/// integral over u in [0, 1] of |Qa(u) - Qb(u)| with piecewise-constant
/// quantile functions. Sample sizes may differ.
double wasserstein1(std::span<const double> a, std::span<const double> b);

/// Wasserstein-1 between the kernel-weight distributions of two stores.
double emd_weights(const ParameterStore<float>& a, const ParameterStore<float>& b);

/// Square matrix of pairwise emd_weights.
std::vector<std::vector<double>> emd_matrix(std::span<const ParameterStore<float>> stores);

struct LeakageTrial {
  std::string key;
  QualityReport stego_vs_cover;      // randomly triggered encoder
  QualityReport recovered_vs_secret;  // randomly triggered decoder on the genuine stego
};

struct Stat {
  double mean = 0.0;
  double stddev = 0.0;  // population
};

struct LeakageReport {
  std::vector<LeakageTrial> trials;
  Stat stego_psnr, stego_apd, recovered_psnr, recovered_apd;
};

/// Per image: cover, secret, and the stego produced by the genuine encoder.
struct LeakageSample {
  ImagePlane cover, secret, stego;
};

struct LeakageOptions {
  int trials = 1000;
  std::uint64_t key_seed = 0x6c65616b;
  std::vector<Key> excluded;  // never sampled, e.g. the genuine keys
};

/// 32-byte printable key from a seeded stream.
std::string random_key(std::uint64_t& stream_state);

/// Fills the holes with random keys and measures how well the resulting
/// encoder and decoder perform; per-trial metrics are averaged over samples.
LeakageReport leakage_trials(const ModelContainer& container, std::span<const LeakageSample> samples,
                             const LeakageOptions& options);

/// Recomputes the summary statistics from the per-trial rows.
void summarize(LeakageReport& report);

struct QualityDelta {
  double psnr = 0.0, ssim = 0.0, apd = 0.0, rmse = 0.0;
};

struct NoisyPair {
  ImagePlane noisy, clean;
};

/// Denoising quality of the baseline minus that of the purified model,
/// averaged over the set.
QualityDelta performance_gap(const ModelContainer& purified, const ModelContainer& baseline,
                             std::span<const NoisyPair> noisy_set);

std::string leakage_csv(const LeakageReport& report);
std::string emd_table(const std::vector<std::vector<double>>& matrix, const std::vector<std::string>& names);

}  // namespace pusnet
