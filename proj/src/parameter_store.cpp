// SPDX-License-Identifier: Apache-2.0
#include "pusnet/parameter_store.hpp"

#include <bit>
#include <cstring>

#include "pusnet/errors.hpp"
#include "pusnet/splitmix.hpp"

namespace pusnet {

ParamLayout::ParamLayout(NetworkSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const int layers = spec_.num_conv_layers;
  kernel_index_.assign(layers + 1, -1);
  bias_index_.assign(layers + 1, -1);
  scale_index_.assign(layers + 1, -1);
  shift_index_.assign(layers + 1, -1);

  auto add = [&](ParamKind kind, int layer, std::string name, std::vector<Index> shape) {
    Index size = 1;
    for (Index d : shape) size *= d;
    entries_.push_back(ParamEntry{std::move(name), kind, layer, std::move(shape), total_, size});
    total_ += size;
    return static_cast<int>(entries_.size()) - 1;
  };

  const Index k = spec_.kernel;
  for (int layer = 1; layer <= layers; ++layer) {
    const std::string prefix = "conv" + std::to_string(layer);
    const Index out = spec_.out_channels(layer);
    const Index in = spec_.in_channels(layer);
    kernel_index_[layer] = add(ParamKind::kernel, layer, prefix + ".weight", {out, in, k, k});
    const auto& kernel = entries_[kernel_index_[layer]];
    segments_.push_back(MaskableSegment{kernel.offset, maskable_, kernel.size});
    maskable_ += kernel.size;
    if (spec_.has_bias(layer)) bias_index_[layer] = add(ParamKind::bias, layer, prefix + ".bias", {out});
    if (spec_.has_norm(layer)) {
      scale_index_[layer] = add(ParamKind::norm_scale, layer, prefix + ".norm.scale", {in});
      shift_index_[layer] = add(ParamKind::norm_shift, layer, prefix + ".norm.shift", {in});
    }
  }
}

std::vector<Index> ParamLayout::maskable_flat_offsets() const {
  std::vector<Index> offsets;
  offsets.reserve(static_cast<std::size_t>(maskable_));
  for (const auto& seg : segments_) {
    for (Index i = 0; i < seg.size; ++i) offsets.push_back(seg.flat_offset + i);
  }
  return offsets;
}

template <typename Scalar>
ParameterStore<Scalar>::ParameterStore(std::shared_ptr<const ParamLayout> layout, Vector<Scalar> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (values_.size() != layout_->total_size()) {
    throw ValidationError("parameter vector has " + std::to_string(values_.size()) + " values, layout needs " +
                          std::to_string(layout_->total_size()));
  }
}

template <typename Scalar>
Vector<Scalar> ParameterStore<Scalar>::maskable_values() const {
  Vector<Scalar> out(layout_->maskable_size());
  for (const auto& seg : layout_->maskable_segments()) {
    out.segment(seg.maskable_offset, seg.size) = values_.segment(seg.flat_offset, seg.size);
  }
  return out;
}

template <typename Scalar>
void ParameterStore<Scalar>::set_maskable_values(const Vector<Scalar>& kernels) {
  if (kernels.size() != layout_->maskable_size()) throw ValidationError("maskable vector size mismatch");
  for (const auto& seg : layout_->maskable_segments()) {
    values_.segment(seg.flat_offset, seg.size) = kernels.segment(seg.maskable_offset, seg.size);
  }
}

template class ParameterStore<float>;
template class ParameterStore<double>;

std::shared_ptr<const ParamLayout> make_layout(const NetworkSpec& spec) {
  return std::make_shared<const ParamLayout>(spec);
}

Index maskable_count(const NetworkSpec& spec) { return ParamLayout(spec).maskable_size(); }

std::uint64_t digest(const ParameterStore<float>& store) {
  std::uint64_t state = kFnvOffsetBasis;
  for (Index i = 0; i < store.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(store.values()[i]);
    const unsigned char bytes[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                    static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    state = fnv1a64(bytes, state);
  }
  return state;
}

}  // namespace pusnet
