// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pusnet/parameter_store.hpp"
#include "pusnet/sparsity.hpp"

namespace pusnet {

inline constexpr char kContainerMagic[4] = {'P', 'U', 'S', 'N'};
inline constexpr std::uint32_t kContainerVersion = 1;

struct ContainerMetadata {
  std::uint64_t data_seed = 0;
  std::uint64_t iterations = 0;
  std::int64_t created_unix = 0;

  bool operator==(const ContainerMetadata&) const = default;
};

/// The published purified model: spec, mask and weights with zeros at every
/// hole. Holds no key material.
///
/// Byte layout, little-endian throughout:
///
///   "PUSN"  u32 version
///   spec    u32 layers, channels, kernel, gn_groups; f64 lrelu_slope;
///           u32 skip_start, skip_end, split_layer, io_channels;
///           u32 bias_count, u32[bias_count] bias layers
///   mask    f64 S; u64 N; u64 p; f64 threshold; u64 w0_seed;
///           u8[ceil(N/8)] bitmap (bit i at byte i/8, position i%8)
///   kernels u64 N; f32[N] in canonical order, zeros at holes
///   extras  u64 count; f32[count] biases and GN parameters in canonical order
///   meta    u64 data_seed; u64 iterations; i64 created_unix
struct ModelContainer {
  SparseMask mask;
  ParameterStore<float> weights;
  ContainerMetadata meta;

  const NetworkSpec& spec() const { return weights.spec(); }

  /// Throws ContainerError on any broken invariant.
  void validate() const;

  bool operator==(const ModelContainer&) const = default;
};

std::vector<std::uint8_t> serialize_container(const ModelContainer& container);
ModelContainer deserialize_container(std::span<const std::uint8_t> bytes);

void save_container(const ModelContainer& container, const std::filesystem::path& path);
ModelContainer load_container(const std::filesystem::path& path);

}  // namespace pusnet
