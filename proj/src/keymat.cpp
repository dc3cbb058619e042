// SPDX-License-Identifier: Apache-2.0
#include "pusnet/keymat.hpp"

#include <cmath>

#include "pusnet/container.hpp"
#include "pusnet/errors.hpp"
#include "pusnet/splitmix.hpp"

namespace pusnet {

std::uint64_t derive_seed(const Key& key) { return fnv1a64(std::string_view(key.bytes)); }

Vector<double> xavier_kernels(const ParamLayout& layout, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Vector<double> values(layout.maskable_size());
  const auto& spec = layout.spec();
  const double area = static_cast<double>(spec.kernel) * spec.kernel;
  for (int layer = 1; layer <= spec.num_conv_layers; ++layer) {
    const double fan_in = spec.in_channels(layer) * area;
    const double fan_out = spec.out_channels(layer) * area;
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    const auto& seg = layout.maskable_segments()[static_cast<std::size_t>(layer - 1)];
    for (Index i = 0; i < seg.size; ++i) values[seg.maskable_offset + i] = (2.0 * rng.uniform() - 1.0) * bound;
  }
  return values;
}

FillWeights synthesize_fill(const NetworkSpec& spec, const Key& key) {
  return FillWeights{xavier_kernels(ParamLayout(spec), derive_seed(key))};
}

template <typename Scalar>
ParameterStore<Scalar> fill_holes(const ParameterStore<Scalar>& purified, const SparseMask& mask,
                                  const FillWeights& fill) {
  const auto& layout = purified.layout();
  if (mask.total != layout.maskable_size() || fill.values.size() != layout.maskable_size()) {
    throw ValidationError("mask or fill weights do not match the network layout");
  }
  ParameterStore<Scalar> dense = purified;
  for (const auto& seg : layout.maskable_segments()) {
    for (Index i = 0; i < seg.size; ++i) {
      const Index m = seg.maskable_offset + i;
      if (!mask.keeps(m)) dense.values()[seg.flat_offset + i] = static_cast<Scalar>(fill.values[m]);
    }
  }
  return dense;
}

template ParameterStore<float> fill_holes<float>(const ParameterStore<float>&, const SparseMask&, const FillWeights&);
template ParameterStore<double> fill_holes<double>(const ParameterStore<double>&, const SparseMask&,
                                                   const FillWeights&);

ParameterStore<float> trigger(const ModelContainer& container, const Key& key, Mode mode) {
  container.validate();
  if (mode == Mode::denoise) return container.weights;
  return fill_holes(container.weights, container.mask, synthesize_fill(container.spec(), key));
}

Mode parse_mode(std::string_view name) {
  if (name == "denoise") return Mode::denoise;
  if (name == "encode") return Mode::encode;
  if (name == "decode") return Mode::decode;
  throw ValidationError("unknown mode '" + std::string(name) + "' (expected denoise, encode or decode)");
}

std::string_view mode_name(Mode mode) {
  switch (mode) {
    case Mode::denoise:
      return "denoise";
    case Mode::encode:
      return "encode";
    case Mode::decode:
      return "decode";
  }
  return "unknown";
}

}  // namespace pusnet
