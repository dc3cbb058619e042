// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <vector>

#include "pusnet/network_spec.hpp"
#include "pusnet/parameter_store.hpp"
#include "pusnet/planes.hpp"

namespace pusnet {

inline constexpr double kNormEpsilon = 1e-5;

/// Executes the conv stack over a ParameterStore. Single-input mode serves both
/// denoising (purified weights) and secret recovery (decoder-filled weights);
/// the two-input mode is the encoder. Forward and backward calls are const and
/// may run concurrently over a shared store.
template <typename Scalar>
class Network {
 public:
  using Mat = RowMatrix<Scalar>;
  using Store = ParameterStore<Scalar>;
  using Image = Planes<Scalar>;

  struct NormCache {
    Mat xhat;
    std::vector<Scalar> rstd;  // per group
  };
  struct LayerCache {
    Mat input;  // what the conv consumed
    NormCache norm;
  };
  /// Activations recorded by a forward pass for the matching backward pass.
  struct PathTape {
    Index height = 0;
    Index width = 0;
    std::vector<LayerCache> layers;  // indexed by layer number
  };
  /// Cover and secret branches hold layers up to and including the split
  /// layer's input; `merged` holds the layers after it.
  struct EncodeTape {
    PathTape cover, secret, merged;
  };

  explicit Network(std::shared_ptr<const ParamLayout> layout);
  explicit Network(const NetworkSpec& spec) : Network(make_layout(spec)) {}

  const NetworkSpec& spec() const { return layout_->spec(); }
  const std::shared_ptr<const ParamLayout>& layout() const { return layout_; }
  Store make_store() const { return Store(layout_); }

  Image forward(const Store& params, const Image& input, PathTape* tape = nullptr) const;
  Image forward_encode(const Store& params, const Image& cover, const Image& secret,
                       EncodeTape* tape = nullptr) const;

  /// Accumulates dLoss/dparams into `grad` and returns dLoss/dinput.
  Mat backward(const Store& params, const PathTape& tape, const Mat& d_output, Vector<Scalar>& grad) const;
  void backward_encode(const Store& params, const EncodeTape& tape, const Mat& d_output,
                       Vector<Scalar>& grad) const;

 private:
  void check_params(const Store& params) const;
  void check_image(const Image& image) const;

  Mat layer_input(int layer, const Store& params, const Mat& prev, LayerCache* cache) const;
  Mat input_backward(int layer, const Store& params, const LayerCache& cache, const Mat& d_input,
                     Vector<Scalar>& grad) const;
  void add_bias(int layer, const Store& params, Mat& act, Index row0) const;
  void bias_backward(int layer, const Mat& d_act, Index row0, Vector<Scalar>& grad) const;

  std::shared_ptr<const ParamLayout> layout_;
};

/// Purified-mode forward (holes expected to be zero).
template <typename Scalar>
Planes<Scalar> forward_denoise(const ParameterStore<Scalar>& params, const Planes<Scalar>& noisy) {
  return Network<Scalar>(params.layout_ptr()).forward(params, noisy);
}

/// Encoder forward over decoder-independent, key-filled weights.
template <typename Scalar>
Planes<Scalar> forward_encode(const ParameterStore<Scalar>& params, const Planes<Scalar>& cover,
                              const Planes<Scalar>& secret) {
  return Network<Scalar>(params.layout_ptr()).forward_encode(params, cover, secret);
}

/// Decoder forward; same single-input path as denoising.
template <typename Scalar>
Planes<Scalar> forward_decode(const ParameterStore<Scalar>& params, const Planes<Scalar>& stego) {
  return Network<Scalar>(params.layout_ptr()).forward(params, stego);
}

extern template class Network<float>;
extern template class Network<double>;

}  // namespace pusnet
