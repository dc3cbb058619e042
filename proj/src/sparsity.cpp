// SPDX-License-Identifier: Apache-2.0
#include "pusnet/sparsity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pusnet/errors.hpp"
#include "pusnet/keymat.hpp"

namespace pusnet {

Index SparseMask::popcount() const {
  return static_cast<Index>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

Index kept_count(double keep_ratio, Index total) {
  return static_cast<Index>(std::floor(keep_ratio * static_cast<double>(total)));
}

template <typename Scalar>
ParameterStore<Scalar> init_weights(const NetworkSpec& spec, std::uint64_t seed) {
  auto layout = make_layout(spec);
  ParameterStore<Scalar> store(layout);
  store.set_maskable_values(xavier_kernels(*layout, seed).template cast<Scalar>());
  for (const auto& e : layout->entries()) {
    if (e.kind == ParamKind::norm_scale) store.values().segment(e.offset, e.size).setOnes();
  }
  return store;
}

template ParameterStore<float> init_weights<float>(const NetworkSpec&, std::uint64_t);
template ParameterStore<double> init_weights<double>(const NetworkSpec&, std::uint64_t);

SparseMask generate_mask(std::span<const double> weights, double keep_ratio) {
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw ValidationError("sparse ratio must lie in (0, 1]");
  if (weights.empty()) throw ValidationError("no maskable weights");
  const auto total = static_cast<Index>(weights.size());
  const Index kept = kept_count(keep_ratio, total);

  SparseMask mask;
  mask.keep_ratio = keep_ratio;
  mask.total = total;
  mask.kept = kept;
  mask.bits.assign(weights.size(), 0);
  mask.threshold = std::numeric_limits<double>::infinity();
  if (kept == 0) return mask;

  std::vector<std::uint32_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0u);
  auto before = [&](std::uint32_t a, std::uint32_t b) {
    const double ma = std::abs(weights[a]), mb = std::abs(weights[b]);
    return ma != mb ? ma > mb : a < b;
  };
  const auto nth = order.begin() + (kept - 1);
  std::nth_element(order.begin(), nth, order.end(), before);
  for (auto it = order.begin(); it <= nth; ++it) mask.bits[*it] = 1;
  mask.threshold = std::abs(weights[*nth]);
  return mask;
}

std::vector<std::uint8_t> pack_bits(const std::vector<std::uint8_t>& bits) {
  std::vector<std::uint8_t> packed((bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  return packed;
}

std::vector<std::uint8_t> unpack_bits(std::span<const std::uint8_t> packed, Index count) {
  const auto n = static_cast<std::size_t>(count);
  if (packed.size() != (n + 7) / 8) throw ValidationError("packed bitmap length does not match bit count");
  std::vector<std::uint8_t> bits(n);
  for (std::size_t i = 0; i < n; ++i) bits[i] = (packed[i / 8] >> (i % 8)) & 1u;
  return bits;
}

template <typename Scalar>
void zero_holes(ParameterStore<Scalar>& store, const SparseMask& mask) {
  const auto& layout = store.layout();
  if (mask.total != layout.maskable_size()) throw ValidationError("mask does not match the network layout");
  for (const auto& seg : layout.maskable_segments()) {
    for (Index i = 0; i < seg.size; ++i) {
      if (!mask.keeps(seg.maskable_offset + i)) store.values()[seg.flat_offset + i] = Scalar(0);
    }
  }
}

template void zero_holes<float>(ParameterStore<float>&, const SparseMask&);
template void zero_holes<double>(ParameterStore<double>&, const SparseMask&);

std::vector<std::uint8_t> shared_indicator(const ParamLayout& layout, const SparseMask& mask) {
  if (mask.total != layout.maskable_size()) throw ValidationError("mask does not match the network layout");
  std::vector<std::uint8_t> shared(static_cast<std::size_t>(layout.total_size()), 1);
  for (const auto& seg : layout.maskable_segments()) {
    for (Index i = 0; i < seg.size; ++i) {
      shared[static_cast<std::size_t>(seg.flat_offset + i)] = mask.keeps(seg.maskable_offset + i) ? 1 : 0;
    }
  }
  return shared;
}

}  // namespace pusnet
