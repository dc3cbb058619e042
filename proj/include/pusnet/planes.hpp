// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

namespace pusnet {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// A stack of 2-D planes stored channel-major: one row per channel, each row
/// holds height*width samples in row-major pixel order. Images are 3-plane
/// stacks with unit-range values; hidden feature maps use the same type.
template <typename Scalar>
struct Planes {
  Index height = 0;
  Index width = 0;
  RowMatrix<Scalar> values;

  Planes() = default;
  Planes(Index channels, Index h, Index w) : height(h), width(w), values(RowMatrix<Scalar>::Zero(channels, h * w)) {}
  Planes(Index h, Index w, RowMatrix<Scalar> v) : height(h), width(w), values(std::move(v)) {}

  Index channels() const { return values.rows(); }
  Index pixels() const { return height * width; }

  Scalar& at(Index c, Index y, Index x) { return values(c, y * width + x); }
  Scalar at(Index c, Index y, Index x) const { return values(c, y * width + x); }

  bool same_shape(const Planes& other) const {
    return height == other.height && width == other.width && channels() == other.channels();
  }

  template <typename Other>
  Planes<Other> cast() const {
    return Planes<Other>(height, width, values.template cast<Other>());
  }

  bool operator==(const Planes& other) const { return same_shape(other) && values == other.values; }
};

using ImagePlane = Planes<float>;

}  // namespace pusnet
