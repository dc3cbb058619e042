// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "pusnet/parameter_store.hpp"
#include "pusnet/sparsity.hpp"

namespace pusnet {

struct ModelContainer;

enum class Mode { denoise, encode, decode };

/// Secret key: an arbitrary byte string.
struct Key {
  std::string bytes;
};

/// FNV-1a 64 of the key bytes.
std::uint64_t derive_seed(const Key& key);

/// Xavier-uniform draw for every kernel value in maskable order. Seeds a
/// SplitMix64 stream and maps each output u (top 53 bits / 2^53) to
/// (2u - 1) * sqrt(6 / (fan_in + fan_out)).
Vector<double> xavier_kernels(const ParamLayout& layout, std::uint64_t seed);

/// Dense fill weights over the maskable set. Depends only on (spec, key).
struct FillWeights {
  Vector<double> values;
};

FillWeights synthesize_fill(const NetworkSpec& spec, const Key& key);

/// purified at kept positions, fill at holes; everything else untouched.
template <typename Scalar>
ParameterStore<Scalar> fill_holes(const ParameterStore<Scalar>& purified, const SparseMask& mask,
                                  const FillWeights& fill);

/// Dense store for the requested mode. Denoise ignores the key and returns
/// the purified weights with holes at zero.
ParameterStore<float> trigger(const ModelContainer& container, const Key& key, Mode mode);

Mode parse_mode(std::string_view name);
std::string_view mode_name(Mode mode);

}  // namespace pusnet
