// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pusnet/network_spec.hpp"
#include "pusnet/planes.hpp"

namespace pusnet {

enum class ParamKind : std::uint8_t { kernel, bias, norm_scale, norm_shift };

struct ParamEntry {
  std::string name;
  ParamKind kind;
  int layer;
  std::vector<Index> shape;
  Index offset;  // into the flat value vector
  Index size;
};

/// A contiguous run of kernel values: flat offset and its position in the
/// maskable (kernel-only) index space.
struct MaskableSegment {
  Index flat_offset;
  Index maskable_offset;
  Index size;
};

/// Canonical traversal order of every parameter: layers ascending; within a
/// layer the kernel ([out, in, row, col] row-major), then bias, then GN scale,
/// then GN shift. Only kernels are maskable.
class ParamLayout {
 public:
  explicit ParamLayout(NetworkSpec spec);

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }
  const std::vector<MaskableSegment>& maskable_segments() const { return segments_; }

  Index total_size() const { return total_; }
  Index maskable_size() const { return maskable_; }

  const ParamEntry& kernel(int layer) const { return entries_[kernel_index_[layer]]; }
  const ParamEntry* bias(int layer) const { return find(bias_index_[layer]); }
  const ParamEntry* norm_scale(int layer) const { return find(scale_index_[layer]); }
  const ParamEntry* norm_shift(int layer) const { return find(shift_index_[layer]); }

  /// Flat offset of every maskable position, in maskable order.
  std::vector<Index> maskable_flat_offsets() const;

 private:
  const ParamEntry* find(int idx) const { return idx < 0 ? nullptr : &entries_[idx]; }

  NetworkSpec spec_;
  std::vector<ParamEntry> entries_;
  std::vector<MaskableSegment> segments_;
  std::vector<int> kernel_index_, bias_index_, scale_index_, shift_index_;
  Index total_ = 0;
  Index maskable_ = 0;
};

/// Named parameter arrays over a shared layout, stored as one flat vector.
template <typename Scalar>
class ParameterStore {
 public:
  using KernelMap = Eigen::Map<const RowMatrix<Scalar>>;
  using VectorMap = Eigen::Map<const Vector<Scalar>>;

  ParameterStore() = default;
  explicit ParameterStore(std::shared_ptr<const ParamLayout> layout)
      : layout_(std::move(layout)), values_(Vector<Scalar>::Zero(layout_->total_size())) {}
  ParameterStore(std::shared_ptr<const ParamLayout> layout, Vector<Scalar> values);

  const ParamLayout& layout() const { return *layout_; }
  const std::shared_ptr<const ParamLayout>& layout_ptr() const { return layout_; }
  const NetworkSpec& spec() const { return layout_->spec(); }

  Vector<Scalar>& values() { return values_; }
  const Vector<Scalar>& values() const { return values_; }
  Index size() const { return values_.size(); }

  /// Kernel of a layer as an out x (in*k*k) matrix.
  KernelMap kernel(int layer) const {
    const auto& e = layout_->kernel(layer);
    return KernelMap(values_.data() + e.offset, e.shape[0], e.size / e.shape[0]);
  }
  VectorMap entry(const ParamEntry& e) const { return VectorMap(values_.data() + e.offset, e.size); }

  /// Kernel values concatenated in maskable order.
  Vector<Scalar> maskable_values() const;
  void set_maskable_values(const Vector<Scalar>& kernels);

  template <typename Other>
  ParameterStore<Other> cast() const {
    return ParameterStore<Other>(layout_, values_.template cast<Other>());
  }

  bool operator==(const ParameterStore& other) const {
    return layout_->spec() == other.layout_->spec() && values_ == other.values_;
  }

 private:
  std::shared_ptr<const ParamLayout> layout_;
  Vector<Scalar> values_;
};

std::shared_ptr<const ParamLayout> make_layout(const NetworkSpec& spec);

/// Number of kernel values in the spec, computed from the layout.
Index maskable_count(const NetworkSpec& spec);

/// FNV-1a digest of the little-endian float32 encoding of every value.
std::uint64_t digest(const ParameterStore<float>& store);

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace pusnet
