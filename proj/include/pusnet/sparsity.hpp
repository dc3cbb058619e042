// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pusnet/network_spec.hpp"
#include "pusnet/parameter_store.hpp"

namespace pusnet {

/// Keep/fill partition of the kernel weights, in maskable order.
/// bits[i] == 1 keeps weight i in the purified network; 0 marks a hole that
/// a key fills.
struct SparseMask {
  std::vector<std::uint8_t> bits;
  double keep_ratio = 1.0;  // S
  Index total = 0;          // N
  Index kept = 0;           // p = floor(S * N)
  double threshold = 0.0;   // magnitude of the last kept weight
  std::uint64_t w0_seed = 0;

  bool keeps(Index i) const { return bits[static_cast<std::size_t>(i)] != 0; }
  Index popcount() const;
  Index holes() const { return total - kept; }

  bool operator==(const SparseMask&) const = default;
};

/// p = floor(S * N) evaluated in double precision.
Index kept_count(double keep_ratio, Index total);

/// Xavier-uniform kernels, zero biases, unit GN scale, zero GN shift.
template <typename Scalar>
ParameterStore<Scalar> init_weights(const NetworkSpec& spec, std::uint64_t seed);

/// Magnitude ranking over kernel values: keeps the p largest |w|, ties broken
/// by ascending maskable index.
SparseMask generate_mask(std::span<const double> magnitudes_source, double keep_ratio);

template <typename Scalar>
SparseMask generate_mask(const ParameterStore<Scalar>& w0, double keep_ratio) {
  const Vector<double> kernels = w0.maskable_values().template cast<double>();
  return generate_mask(std::span<const double>(kernels.data(), static_cast<std::size_t>(kernels.size())),
                       keep_ratio);
}

/// Little-endian bit packing: bit i lives in byte i / 8 at position i % 8.
std::vector<std::uint8_t> pack_bits(const std::vector<std::uint8_t>& bits);
std::vector<std::uint8_t> unpack_bits(std::span<const std::uint8_t> packed, Index count);

/// Zeroes every hole position of the kernels in place.
template <typename Scalar>
void zero_holes(ParameterStore<Scalar>& store, const SparseMask& mask);

/// 1 for every parameter trained as part of the shared set (kept kernel
/// weights, biases, GN parameters), 0 at holes.
std::vector<std::uint8_t> shared_indicator(const ParamLayout& layout, const SparseMask& mask);

}  // namespace pusnet
