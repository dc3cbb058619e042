// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <random>

#include "pusnet/errors.hpp"
#include "pusnet/network.hpp"
#include "pusnet/sparsity.hpp"
#include "support/synthetic.hpp"

using namespace pusnet;
using pusnet::testing::synthetic_image;

namespace {

// Counts parameters straight from the architecture description.
Index count_parameters(int layers, int width, int k, int io, bool maskable_only) {
  Index total = 0;
  for (int l = 1; l <= layers; ++l) {
    const int in = l == 1 ? io : width;
    const int out = l == layers ? io : width;
    total += Index(in) * out * k * k;
    if (maskable_only) continue;
    if (l == 1 || l == layers) total += out;
    if (l > 1 && l < layers) total += 2 * in;
  }
  return total;
}

template <typename S>
Planes<S> random_planes(Index c, Index h, Index w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Planes<S> p(c, h, w);
  for (Index i = 0; i < p.values.size(); ++i) p.values.data()[i] = static_cast<S>(u(rng));
  return p;
}

}  // namespace

TEST_CASE("default layout matches an independent parameter count") {
  const NetworkSpec spec;
  const auto layout = make_layout(spec);
  CHECK(layout->maskable_size() == 630144);
  CHECK(layout->maskable_size() == count_parameters(19, 64, 3, 3, true));
  CHECK(layout->total_size() == count_parameters(19, 64, 3, 3, false));
  CHECK(maskable_count(spec) == 630144);

  const auto toy = pusnet::testing::toy_spec();
  CHECK(make_layout(toy)->total_size() == count_parameters(9, 16, 3, 3, false));
  CHECK(init_weights<float>(spec, 1).size() == layout->total_size());
}

TEST_CASE("layout order is layer, kernel, bias, scale, shift") {
  const auto layout = make_layout(pusnet::testing::tiny_spec());
  const auto& e = layout->entries();
  REQUIRE(e.size() == 7);
  CHECK(e[0].kind == ParamKind::kernel);
  CHECK(e[1].kind == ParamKind::bias);
  CHECK(e[2].kind == ParamKind::kernel);
  CHECK(e[3].kind == ParamKind::norm_scale);
  CHECK(e[4].kind == ParamKind::norm_shift);
  CHECK(e[5].kind == ParamKind::kernel);
  CHECK(e[6].kind == ParamKind::bias);
  Index offset = 0;
  for (const auto& entry : e) {
    CHECK(entry.offset == offset);
    offset += entry.size;
  }
  CHECK(offset == layout->total_size());
}

TEST_CASE("spec validation") {
  NetworkSpec spec;
  CHECK_NOTHROW(spec.validate());
  CHECK(spec.skip_source(4) == 0);
  CHECK(spec.skip_source(6) == 4);
  CHECK(spec.skip_source(16) == 14);
  CHECK(spec.skip_source(17) == 0);
  CHECK(spec.skip_source(5) == 0);

  NetworkSpec odd = spec;
  odd.channels = 63;
  odd.gn_groups = 7;
  CHECK_THROWS_AS(odd.validate(), ValidationError);

  NetworkSpec bad_groups = spec;
  bad_groups.gn_groups = 5;
  CHECK_THROWS_AS(bad_groups.validate(), ValidationError);

  NetworkSpec bad_split = spec;
  bad_split.split_layer = 19;
  CHECK_THROWS_AS(bad_split.validate(), ValidationError);

  NetworkSpec bad_skip = spec;
  bad_skip.skip_end = 15;
  CHECK_THROWS_AS(bad_skip.validate(), ValidationError);

  NetworkSpec even_kernel = spec;
  even_kernel.kernel = 4;
  CHECK_THROWS_AS(even_kernel.validate(), ValidationError);
}

TEST_CASE("forward preserves shape and is deterministic") {
  const auto spec = pusnet::testing::toy_spec();
  const auto params = init_weights<float>(spec, 3);
  const Network<float> net(params.layout_ptr());
  for (auto [h, w] : {std::pair<Index, Index>{17, 23}, {1, 1}, {32, 8}}) {
    const auto x = random_planes<float>(3, h, w, 9);
    const auto y = net.forward(params, x);
    CHECK(y.height == h);
    CHECK(y.width == w);
    CHECK(y.channels() == 3);
    CHECK(y.values.allFinite());
    CHECK(net.forward(params, x) == y);

    const auto s = net.forward_encode(params, x, random_planes<float>(3, h, w, 10));
    CHECK(s.same_shape(x));
    CHECK(s.values.allFinite());
  }
}

TEST_CASE("forward rejects wrong channel count and mismatched encode inputs") {
  const auto spec = pusnet::testing::tiny_spec();
  const auto params = init_weights<float>(spec, 3);
  const Network<float> net(params.layout_ptr());
  CHECK_THROWS_AS(net.forward(params, random_planes<float>(4, 5, 5, 1)), ValidationError);
  CHECK_THROWS_AS(net.forward_encode(params, random_planes<float>(3, 5, 5, 1), random_planes<float>(3, 5, 6, 1)),
                  ValidationError);
  const auto other = init_weights<float>(pusnet::testing::toy_spec(), 3);
  CHECK_THROWS_AS(net.forward(other, random_planes<float>(3, 5, 5, 1)), ValidationError);
}

TEST_CASE("encoding an image with itself equals the single-input forward") {
  const auto spec = pusnet::testing::toy_spec();
  const auto params = init_weights<double>(spec, 5);
  const Network<double> net(params.layout_ptr());
  const auto x = synthetic_image(4, 12, 12).cast<double>();
  const auto a = net.forward(params, x);
  const auto b = net.forward_encode(params, x, x);
  CHECK((a.values - b.values).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("each half of the split layer sees only its own branch") {
  const auto spec = pusnet::testing::toy_spec();
  auto params = init_weights<double>(spec, 6);
  const Network<double> net(params.layout_ptr());
  const auto cover = synthetic_image(1, 10, 10).cast<double>();
  const auto secret = synthetic_image(2, 10, 10).cast<double>();
  const int split = spec.split_layer;
  const Index half = spec.channels / 2;

  typename Network<double>::EncodeTape base;
  net.forward_encode(params, cover, secret, &base);
  const auto& before = base.merged.layers[split + 1].input;
  REQUIRE(before.rows() == spec.channels);

  // A weight of the bottom half of the filters only moves the secret half.
  const auto& k = params.layout().kernel(split);
  params.values()(k.offset + half * (k.size / k.shape[0]) + 3) += 0.5;
  typename Network<double>::EncodeTape moved;
  net.forward_encode(params, cover, secret, &moved);
  const auto& after = moved.merged.layers[split + 1].input;
  CHECK(after.topRows(half) == before.topRows(half));
  CHECK_FALSE(after.bottomRows(half) == before.bottomRows(half));

  // Changing the secret leaves the cover half of the split output untouched.
  typename Network<double>::EncodeTape other;
  net.forward_encode(params, cover, synthetic_image(3, 10, 10).cast<double>(), &other);
  CHECK(other.merged.layers[split + 1].input.topRows(half) == after.topRows(half));
}

TEST_CASE("both branches share the prefix weights") {
  const auto spec = pusnet::testing::toy_spec();
  auto params = init_weights<double>(spec, 7);
  const Network<double> net(params.layout_ptr());
  const auto cover = synthetic_image(1, 8, 8).cast<double>();
  const auto secret = synthetic_image(2, 8, 8).cast<double>();
  typename Network<double>::EncodeTape before, after;
  net.forward_encode(params, cover, secret, &before);
  params.values()(params.layout().kernel(1).offset) += 0.25;
  net.forward_encode(params, cover, secret, &after);
  CHECK_FALSE(before.cover.layers[2].input == after.cover.layers[2].input);
  CHECK_FALSE(before.secret.layers[2].input == after.secret.layers[2].input);
}

TEST_CASE("outputs stay finite for large inputs") {
  const auto spec = pusnet::testing::tiny_spec();
  const auto params = init_weights<float>(spec, 8);
  auto x = random_planes<float>(3, 6, 6, 2);
  x.values *= 1e4f;
  CHECK(forward_denoise(params, x).values.allFinite());
  Planes<float> flat(3, 6, 6);
  CHECK(forward_denoise(params, flat).values.allFinite());
}
