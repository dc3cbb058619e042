// SPDX-License-Identifier: Apache-2.0
#include "pusnet/network.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pusnet/errors.hpp"

namespace pusnet {

namespace {

// Upper bound on the im2col buffer, in elements.
constexpr Index kColumnBudget = Index{1} << 21;

template <typename Scalar>
using Mat = RowMatrix<Scalar>;

Index chunk_rows(Index kdim, Index width, Index height) {
  return std::clamp<Index>(kColumnBudget / std::max<Index>(1, kdim * width), 1, height);
}

// col(ci*k*k + dy*k + dx, (y - r0)*w + x) = z(ci, y + dy - pad, x + dx - pad), zero outside.
template <typename Scalar>
void im2col(const Mat<Scalar>& z, Index h, Index w, int k, Index r0, Index r1, Mat<Scalar>& col) {
  const Index pad = k / 2;
  const Index n = (r1 - r0) * w;
  col.resize(z.rows() * k * k, n);
  for (Index ci = 0; ci < z.rows(); ++ci) {
    const Scalar* src_plane = z.row(ci).data();
    for (int dy = 0; dy < k; ++dy) {
      for (int dx = 0; dx < k; ++dx) {
        Scalar* dst = col.row((ci * k + dy) * k + dx).data();
        const Index shift = dx - pad;
        const Index x0 = std::max<Index>(0, -shift);
        const Index x1 = std::min<Index>(w, w - shift);
        for (Index y = r0; y < r1; ++y) {
          Scalar* d = dst + (y - r0) * w;
          const Index yy = y + dy - pad;
          if (yy < 0 || yy >= h || x0 >= x1) {
            std::fill(d, d + w, Scalar(0));
            continue;
          }
          const Scalar* s = src_plane + yy * w + shift;
          for (Index x = 0; x < x0; ++x) d[x] = Scalar(0);
          std::copy(s + x0, s + x1, d + x0);
          for (Index x = x1; x < w; ++x) d[x] = Scalar(0);
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const Mat<Scalar>& col, Index h, Index w, int k, Index r0, Index r1, Mat<Scalar>& dz) {
  const Index pad = k / 2;
  for (Index ci = 0; ci < dz.rows(); ++ci) {
    Scalar* dst_plane = dz.row(ci).data();
    for (int dy = 0; dy < k; ++dy) {
      for (int dx = 0; dx < k; ++dx) {
        const Scalar* src = col.row((ci * k + dy) * k + dx).data();
        const Index shift = dx - pad;
        const Index x0 = std::max<Index>(0, -shift);
        const Index x1 = std::min<Index>(w, w - shift);
        for (Index y = r0; y < r1; ++y) {
          const Index yy = y + dy - pad;
          if (yy < 0 || yy >= h) continue;
          const Scalar* s = src + (y - r0) * w;
          Scalar* d = dst_plane + yy * w + shift;
          Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(d + x0, x1 - x0) +=
              Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(s + x0, x1 - x0);
        }
      }
    }
  }
}

template <typename Scalar>
Mat<Scalar> conv_forward(const Eigen::Ref<const Mat<Scalar>>& kernel, const Mat<Scalar>& z, Index h, Index w,
                         int k) {
  Mat<Scalar> out(kernel.rows(), h * w);
  Mat<Scalar> col;
  const Index step = chunk_rows(kernel.cols(), w, h);
  for (Index r0 = 0; r0 < h; r0 += step) {
    const Index r1 = std::min(h, r0 + step);
    im2col(z, h, w, k, r0, r1, col);
    out.middleCols(r0 * w, (r1 - r0) * w).noalias() = kernel * col;
  }
  return out;
}

template <typename Scalar>
Mat<Scalar> conv_backward(const Eigen::Ref<const Mat<Scalar>>& kernel, const Mat<Scalar>& z, const Mat<Scalar>& d_out,
                          Index h, Index w, int k, Eigen::Ref<Mat<Scalar>> d_kernel) {
  Mat<Scalar> d_z = Mat<Scalar>::Zero(z.rows(), h * w);
  Mat<Scalar> col, d_col;
  const Index step = chunk_rows(kernel.cols(), w, h);
  for (Index r0 = 0; r0 < h; r0 += step) {
    const Index r1 = std::min(h, r0 + step);
    const Index n = (r1 - r0) * w;
    im2col(z, h, w, k, r0, r1, col);
    const auto d_chunk = d_out.middleCols(r0 * w, n);
    d_kernel.noalias() += d_chunk * col.transpose();
    d_col.noalias() = kernel.transpose() * d_chunk;
    col2im_add(d_col, h, w, k, r0, r1, d_z);
  }
  return d_z;
}

template <typename Scalar>
Mat<Scalar> norm_lrelu_forward(const Mat<Scalar>& a, const Eigen::Map<const Vector<Scalar>>& scale,
                               const Eigen::Map<const Vector<Scalar>>& shift, int groups, Scalar slope,
                               typename Network<Scalar>::NormCache* cache) {
  const Index channels = a.rows(), n = a.cols();
  const Index per_group = channels / groups;
  Mat<Scalar> xhat(channels, n);
  Mat<Scalar> z(channels, n);
  std::vector<Scalar> rstd(groups);
  for (int g = 0; g < groups; ++g) {
    const auto block = a.middleRows(g * per_group, per_group).array();
    const double mean = block.template cast<double>().mean();
    const double var = (block.template cast<double>() - mean).square().mean();
    rstd[g] = static_cast<Scalar>(1.0 / std::sqrt(var + kNormEpsilon));
    for (Index c = g * per_group; c < (g + 1) * per_group; ++c) {
      const Scalar* src = a.row(c).data();
      Scalar* xh = xhat.row(c).data();
      Scalar* out = z.row(c).data();
      const Scalar m = static_cast<Scalar>(mean), r = rstd[g], s = scale[c], t = shift[c];
      for (Index i = 0; i < n; ++i) {
        xh[i] = (src[i] - m) * r;
        const Scalar y = xh[i] * s + t;
        out[i] = y > Scalar(0) ? y : y * slope;
      }
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return z;
}

template <typename Scalar>
Mat<Scalar> norm_lrelu_backward(const Mat<Scalar>& d_z, const typename Network<Scalar>::NormCache& cache,
                                const Eigen::Map<const Vector<Scalar>>& scale,
                                const Eigen::Map<const Vector<Scalar>>& shift, int groups, Scalar slope,
                                Scalar* d_scale, Scalar* d_shift) {
  const Mat<Scalar>& xhat = cache.xhat;
  const Index channels = xhat.rows(), n = xhat.cols();
  const Index per_group = channels / groups;
  Mat<Scalar> d_a(channels, n);
  const double count = static_cast<double>(per_group * n);
  for (int g = 0; g < groups; ++g) {
    // d_a temporarily holds d_xhat for the group.
    double sum_d = 0.0, sum_dx = 0.0;
    for (Index c = g * per_group; c < (g + 1) * per_group; ++c) {
      const Scalar* xh = xhat.row(c).data();
      const Scalar* dz = d_z.row(c).data();
      Scalar* dx = d_a.row(c).data();
      const Scalar s = scale[c], t = shift[c];
      Scalar acc_scale = 0, acc_shift = 0, acc_d = 0, acc_dx = 0;
      for (Index i = 0; i < n; ++i) {
        const Scalar y = xh[i] * s + t;
        const Scalar dy = y > Scalar(0) ? dz[i] : dz[i] * slope;
        acc_scale += dy * xh[i];
        acc_shift += dy;
        dx[i] = dy * s;
        acc_d += dx[i];
        acc_dx += dx[i] * xh[i];
      }
      d_scale[c] += acc_scale;
      d_shift[c] += acc_shift;
      sum_d += acc_d;
      sum_dx += acc_dx;
    }
    const Scalar r = cache.rstd[g];
    const Scalar mean_d = static_cast<Scalar>(sum_d / count), mean_dx = static_cast<Scalar>(sum_dx / count);
    for (Index c = g * per_group; c < (g + 1) * per_group; ++c) {
      const Scalar* xh = xhat.row(c).data();
      Scalar* dx = d_a.row(c).data();
      for (Index i = 0; i < n; ++i) dx[i] = r * (dx[i] - mean_d - xh[i] * mean_dx);
    }
  }
  return d_a;
}

template <typename Scalar>
void accumulate(Mat<Scalar>& target, const Mat<Scalar>& value) {
  if (target.size() == 0) {
    target = value;
  } else {
    target += value;
  }
}

// Channel-wise merge used where a pre-split activation meets the merged
// stream: the first half of the channels comes from the cover branch, the
// second half from the secret branch, mirroring the split layer's filters.
template <typename Scalar>
Mat<Scalar> merge_halves(const Mat<Scalar>& cover, const Mat<Scalar>& secret) {
  const Index half = cover.rows() / 2;
  Mat<Scalar> out(cover.rows(), cover.cols());
  out.topRows(half) = cover.topRows(half);
  out.bottomRows(cover.rows() - half) = secret.bottomRows(cover.rows() - half);
  return out;
}

template <typename Scalar>
void scatter_halves(const Mat<Scalar>& d, Index rows, Mat<Scalar>& d_cover, Mat<Scalar>& d_secret) {
  const Index half = rows / 2;
  if (d_cover.size() == 0) d_cover = Mat<Scalar>::Zero(rows, d.cols());
  if (d_secret.size() == 0) d_secret = Mat<Scalar>::Zero(rows, d.cols());
  d_cover.topRows(half) += d.topRows(half);
  d_secret.bottomRows(rows - half) += d.bottomRows(rows - half);
}

}  // namespace

template <typename Scalar>
Network<Scalar>::Network(std::shared_ptr<const ParamLayout> layout) : layout_(std::move(layout)) {}

template <typename Scalar>
void Network<Scalar>::check_params(const Store& params) const {
  if (params.size() != layout_->total_size() || !(params.spec() == spec())) {
    throw ValidationError("parameter store does not match the network layout");
  }
}

template <typename Scalar>
void Network<Scalar>::check_image(const Image& image) const {
  if (image.channels() != spec().io_channels || image.height <= 0 || image.width <= 0) {
    throw ValidationError("input must have " + std::to_string(spec().io_channels) +
                          " channels and non-empty extent, got " + std::to_string(image.channels()) + "x" +
                          std::to_string(image.height) + "x" + std::to_string(image.width));
  }
}

template <typename Scalar>
auto Network<Scalar>::layer_input(int layer, const Store& params, const Mat& prev, LayerCache* cache) const -> Mat {
  if (!spec().has_norm(layer)) return prev;
  const auto& lay = *layout_;
  return norm_lrelu_forward<Scalar>(prev, params.entry(*lay.norm_scale(layer)), params.entry(*lay.norm_shift(layer)),
                                    spec().gn_groups, static_cast<Scalar>(spec().lrelu_slope),
                                    cache ? &cache->norm : nullptr);
}

template <typename Scalar>
auto Network<Scalar>::input_backward(int layer, const Store& params, const LayerCache& cache, const Mat& d_input,
                                     Vector<Scalar>& grad) const -> Mat {
  if (!spec().has_norm(layer)) return d_input;
  const auto& scale = *layout_->norm_scale(layer);
  const auto& shift = *layout_->norm_shift(layer);
  return norm_lrelu_backward<Scalar>(d_input, cache.norm, params.entry(scale), params.entry(shift), spec().gn_groups,
                                     static_cast<Scalar>(spec().lrelu_slope), grad.data() + scale.offset,
                                     grad.data() + shift.offset);
}

template <typename Scalar>
void Network<Scalar>::add_bias(int layer, const Store& params, Mat& act, Index row0) const {
  const ParamEntry* bias = layout_->bias(layer);
  if (!bias) return;
  const auto b = params.entry(*bias);
  for (Index r = 0; r < act.rows(); ++r) act.row(r).array() += b[row0 + r];
}

template <typename Scalar>
void Network<Scalar>::bias_backward(int layer, const Mat& d_act, Index row0, Vector<Scalar>& grad) const {
  const ParamEntry* bias = layout_->bias(layer);
  if (!bias) return;
  grad.segment(bias->offset + row0, d_act.rows()) += d_act.rowwise().sum();
}

template <typename Scalar>
auto Network<Scalar>::forward(const Store& params, const Image& input, PathTape* tape) const -> Image {
  check_params(params);
  check_image(input);
  const int layers = spec().num_conv_layers;
  const Index h = input.height, w = input.width;
  if (tape) {
    tape->height = h;
    tape->width = w;
    tape->layers.assign(layers + 1, LayerCache{});
  }
  std::vector<Mat> act(layers + 1);
  for (int k = 1; k <= layers; ++k) {
    LayerCache* cache = tape ? &tape->layers[k] : nullptr;
    Mat z = layer_input(k, params, k == 1 ? input.values : act[k - 1], cache);
    act[k] = conv_forward<Scalar>(params.kernel(k), z, h, w, spec().kernel);
    add_bias(k, params, act[k], 0);
    if (int src = spec().skip_source(k)) act[k] += act[src];
    if (cache) cache->input = std::move(z);
    if (k >= 2) act[k - 2] = Mat();
  }
  return Image(h, w, std::move(act[layers]));
}

template <typename Scalar>
auto Network<Scalar>::forward_encode(const Store& params, const Image& cover, const Image& secret,
                                     EncodeTape* tape) const -> Image {
  check_params(params);
  check_image(cover);
  check_image(secret);
  if (!cover.same_shape(secret)) throw ValidationError("cover and secret shapes differ");
  const int layers = spec().num_conv_layers;
  const int split = spec().split_layer;
  const Index h = cover.height, w = cover.width;
  const int k_size = spec().kernel;
  if (tape) {
    for (PathTape* t : {&tape->cover, &tape->secret, &tape->merged}) {
      t->height = h;
      t->width = w;
      t->layers.assign(layers + 1, LayerCache{});
    }
  }

  std::vector<Mat> act_cover(split), act_secret(split), act(layers + 1);
  auto run_prefix = [&](const Image& image, std::vector<Mat>& branch_act, PathTape* branch_tape) {
    for (int k = 1; k < split; ++k) {
      LayerCache* cache = branch_tape ? &branch_tape->layers[k] : nullptr;
      Mat z = layer_input(k, params, k == 1 ? image.values : branch_act[k - 1], cache);
      branch_act[k] = conv_forward<Scalar>(params.kernel(k), z, h, w, k_size);
      add_bias(k, params, branch_act[k], 0);
      if (int src = spec().skip_source(k)) branch_act[k] += branch_act[src];
      if (cache) cache->input = std::move(z);
    }
  };
  run_prefix(cover, act_cover, tape ? &tape->cover : nullptr);
  run_prefix(secret, act_secret, tape ? &tape->secret : nullptr);

  auto merged = [&](int j) -> Mat { return j >= split ? act[j] : merge_halves<Scalar>(act_cover[j], act_secret[j]); };

  {
    LayerCache* cache_cover = tape ? &tape->cover.layers[split] : nullptr;
    LayerCache* cache_secret = tape ? &tape->secret.layers[split] : nullptr;
    Mat z_cover = layer_input(split, params, act_cover[split - 1], cache_cover);
    Mat z_secret = layer_input(split, params, act_secret[split - 1], cache_secret);
    const auto kernel = params.kernel(split);
    const Index out = kernel.rows(), half = out / 2;
    Mat top = conv_forward<Scalar>(kernel.topRows(half), z_cover, h, w, k_size);
    Mat bottom = conv_forward<Scalar>(kernel.bottomRows(out - half), z_secret, h, w, k_size);
    add_bias(split, params, top, 0);
    add_bias(split, params, bottom, half);
    act[split].resize(out, h * w);
    act[split].topRows(half) = top;
    act[split].bottomRows(out - half) = bottom;
    if (int src = spec().skip_source(split)) act[split] += merged(src);
    if (cache_cover) cache_cover->input = std::move(z_cover);
    if (cache_secret) cache_secret->input = std::move(z_secret);
  }

  for (int k = split + 1; k <= layers; ++k) {
    LayerCache* cache = tape ? &tape->merged.layers[k] : nullptr;
    Mat z = layer_input(k, params, act[k - 1], cache);
    act[k] = conv_forward<Scalar>(params.kernel(k), z, h, w, k_size);
    add_bias(k, params, act[k], 0);
    if (int src = spec().skip_source(k)) act[k] += merged(src);
    if (cache) cache->input = std::move(z);
  }
  return Image(h, w, std::move(act[layers]));
}

template <typename Scalar>
auto Network<Scalar>::backward(const Store& params, const PathTape& tape, const Mat& d_output,
                               Vector<Scalar>& grad) const -> Mat {
  const int layers = spec().num_conv_layers;
  const Index h = tape.height, w = tape.width;
  std::vector<Mat> d(layers + 1);
  d[layers] = d_output;
  for (int k = layers; k >= 1; --k) {
    const Mat& d_act = d[k];
    bias_backward(k, d_act, 0, grad);
    if (int src = spec().skip_source(k)) accumulate<Scalar>(d[src], d_act);
    const auto& kernel = layout_->kernel(k);
    Eigen::Map<Mat> d_kernel(grad.data() + kernel.offset, kernel.shape[0], kernel.size / kernel.shape[0]);
    Mat d_z = conv_backward<Scalar>(params.kernel(k), tape.layers[k].input, d_act, h, w, spec().kernel, d_kernel);
    Mat d_prev = input_backward(k, params, tape.layers[k], d_z, grad);
    d[k] = Mat();
    if (k == 1) return d_prev;
    accumulate<Scalar>(d[k - 1], d_prev);
  }
  return Mat();
}

template <typename Scalar>
void Network<Scalar>::backward_encode(const Store& params, const EncodeTape& tape, const Mat& d_output,
                                      Vector<Scalar>& grad) const {
  const int layers = spec().num_conv_layers;
  const int split = spec().split_layer;
  const Index h = tape.merged.height, w = tape.merged.width;
  const Index channels = spec().channels;
  std::vector<Mat> d(layers + 1), d_cover(split), d_secret(split);

  auto to_source = [&](int src, const Mat& d_act) {
    if (src >= split) {
      accumulate<Scalar>(d[src], d_act);
    } else {
      scatter_halves<Scalar>(d_act, channels, d_cover[src], d_secret[src]);
    }
  };
  auto kernel_grad = [&](int k) {
    const auto& kernel = layout_->kernel(k);
    return Eigen::Map<Mat>(grad.data() + kernel.offset, kernel.shape[0], kernel.size / kernel.shape[0]);
  };

  d[layers] = d_output;
  for (int k = layers; k > split; --k) {
    bias_backward(k, d[k], 0, grad);
    if (int src = spec().skip_source(k)) to_source(src, d[k]);
    auto d_kernel = kernel_grad(k);
    Mat d_z = conv_backward<Scalar>(params.kernel(k), tape.merged.layers[k].input, d[k], h, w, spec().kernel, d_kernel);
    accumulate<Scalar>(d[k - 1], input_backward(k, params, tape.merged.layers[k], d_z, grad));
    d[k] = Mat();
  }

  {
    const Mat& d_act = d[split];
    const Index out = d_act.rows(), half = out / 2;
    const Mat d_top = d_act.topRows(half);
    const Mat d_bottom = d_act.bottomRows(out - half);
    bias_backward(split, d_top, 0, grad);
    bias_backward(split, d_bottom, half, grad);
    if (int src = spec().skip_source(split)) to_source(src, d_act);
    const auto kernel = params.kernel(split);
    auto d_kernel = kernel_grad(split);
    Mat d_z_cover = conv_backward<Scalar>(kernel.topRows(half), tape.cover.layers[split].input, d_top, h, w,
                                          spec().kernel, d_kernel.topRows(half));
    Mat d_z_secret = conv_backward<Scalar>(kernel.bottomRows(out - half), tape.secret.layers[split].input, d_bottom, h,
                                           w, spec().kernel, d_kernel.bottomRows(out - half));
    accumulate<Scalar>(d_cover[split - 1], input_backward(split, params, tape.cover.layers[split], d_z_cover, grad));
    accumulate<Scalar>(d_secret[split - 1],
                       input_backward(split, params, tape.secret.layers[split], d_z_secret, grad));
  }

  auto run_prefix = [&](const PathTape& branch, std::vector<Mat>& d_branch) {
    for (int k = split - 1; k >= 1; --k) {
      if (d_branch[k].size() == 0) continue;
      bias_backward(k, d_branch[k], 0, grad);
      if (int src = spec().skip_source(k)) accumulate<Scalar>(d_branch[src], d_branch[k]);
      auto d_kernel = kernel_grad(k);
      Mat d_z = conv_backward<Scalar>(params.kernel(k), branch.layers[k].input, d_branch[k], h, w, spec().kernel,
                                      d_kernel);
      if (k > 1) accumulate<Scalar>(d_branch[k - 1], input_backward(k, params, branch.layers[k], d_z, grad));
      d_branch[k] = Mat();
    }
  };
  run_prefix(tape.cover, d_cover);
  run_prefix(tape.secret, d_secret);
}

template class Network<float>;
template class Network<double>;

}  // namespace pusnet
