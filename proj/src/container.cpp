// SPDX-License-Identifier: Apache-2.0
#include "pusnet/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "pusnet/errors.hpp"

namespace pusnet {

namespace {

class ByteWriter {
 public:
  template <typename T>
  void put(T value) {
    using Bits = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                    std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    const auto bits = std::bit_cast<Bits>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void put_bytes(std::span<const std::uint8_t> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }

  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    using Bits = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                    std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    need(sizeof(T), what);
    Bits bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<Bits>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return std::bit_cast<T>(bits);
  }

  std::span<const std::uint8_t> get_bytes(std::size_t n, const char* what) {
    need(n, what);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw ContainerError(std::string("truncated container while reading ") + what + " at byte " +
                           std::to_string(pos_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t narrow(int value) { return static_cast<std::uint32_t>(value); }

}  // namespace

void ModelContainer::validate() const {
  const auto& layout = weights.layout();
  if (mask.total != layout.maskable_size() || static_cast<Index>(mask.bits.size()) != mask.total) {
    throw ContainerError("mask length " + std::to_string(mask.bits.size()) + " does not match maskable count " +
                         std::to_string(layout.maskable_size()));
  }
  if (mask.popcount() != mask.kept) {
    throw ContainerError("mask popcount " + std::to_string(mask.popcount()) + " differs from recorded kept count " +
                         std::to_string(mask.kept));
  }
  for (const auto& seg : layout.maskable_segments()) {
    for (Index i = 0; i < seg.size; ++i) {
      const Index m = seg.maskable_offset + i;
      if (!mask.keeps(m) && weights.values()[seg.flat_offset + i] != 0.0f) {
        throw ContainerError("hole violation at index " + std::to_string(m));
      }
    }
  }
}

std::vector<std::uint8_t> serialize_container(const ModelContainer& c) {
  c.validate();
  const NetworkSpec& spec = c.spec();
  ByteWriter out;
  out.put_bytes(std::span(reinterpret_cast<const std::uint8_t*>(kContainerMagic), 4));
  out.put(kContainerVersion);

  out.put(narrow(spec.num_conv_layers));
  out.put(narrow(spec.channels));
  out.put(narrow(spec.kernel));
  out.put(narrow(spec.gn_groups));
  out.put(spec.lrelu_slope);
  out.put(narrow(spec.skip_start));
  out.put(narrow(spec.skip_end));
  out.put(narrow(spec.split_layer));
  out.put(narrow(spec.io_channels));
  out.put(static_cast<std::uint32_t>(spec.bias_layers.size()));
  for (int layer : spec.bias_layers) out.put(narrow(layer));

  out.put(c.mask.keep_ratio);
  out.put(static_cast<std::uint64_t>(c.mask.total));
  out.put(static_cast<std::uint64_t>(c.mask.kept));
  out.put(c.mask.threshold);
  out.put(c.mask.w0_seed);
  out.put_bytes(pack_bits(c.mask.bits));

  const auto& layout = c.weights.layout();
  out.put(static_cast<std::uint64_t>(layout.maskable_size()));
  const Vector<float> kernels = c.weights.maskable_values();
  for (Index i = 0; i < kernels.size(); ++i) out.put(kernels[i]);
  const std::uint64_t extras = static_cast<std::uint64_t>(layout.total_size() - layout.maskable_size());
  out.put(extras);
  for (const auto& e : layout.entries()) {
    if (e.kind == ParamKind::kernel) continue;
    for (Index i = 0; i < e.size; ++i) out.put(c.weights.values()[e.offset + i]);
  }

  out.put(c.meta.data_seed);
  out.put(c.meta.iterations);
  out.put(c.meta.created_unix);
  return out.take();
}

ModelContainer deserialize_container(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  const auto magic = in.get_bytes(4, "magic");
  if (std::memcmp(magic.data(), kContainerMagic, 4) != 0) throw ContainerError("bad magic: not a PUSN container");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kContainerVersion) {
    throw ContainerError("unsupported container version " + std::to_string(version));
  }

  NetworkSpec spec;
  spec.num_conv_layers = static_cast<int>(in.get<std::uint32_t>("spec"));
  spec.channels = static_cast<int>(in.get<std::uint32_t>("spec"));
  spec.kernel = static_cast<int>(in.get<std::uint32_t>("spec"));
  spec.gn_groups = static_cast<int>(in.get<std::uint32_t>("spec"));
  spec.lrelu_slope = in.get<double>("spec");
  spec.skip_start = static_cast<int>(in.get<std::uint32_t>("spec"));
  spec.skip_end = static_cast<int>(in.get<std::uint32_t>("spec"));
  spec.split_layer = static_cast<int>(in.get<std::uint32_t>("spec"));
  spec.io_channels = static_cast<int>(in.get<std::uint32_t>("spec"));
  const auto bias_count = in.get<std::uint32_t>("spec");
  if (bias_count > static_cast<std::uint32_t>(spec.num_conv_layers)) throw ContainerError("bias layer count too large");
  spec.bias_layers.clear();
  for (std::uint32_t i = 0; i < bias_count; ++i) spec.bias_layers.push_back(static_cast<int>(in.get<std::uint32_t>("spec")));
  try {
    spec.validate();
  } catch (const ValidationError& e) {
    throw ContainerError(std::string("invalid network spec in container: ") + e.what());
  }
  auto layout = make_layout(spec);

  ModelContainer c;
  c.mask.keep_ratio = in.get<double>("mask");
  c.mask.total = static_cast<Index>(in.get<std::uint64_t>("mask"));
  c.mask.kept = static_cast<Index>(in.get<std::uint64_t>("mask"));
  c.mask.threshold = in.get<double>("mask");
  c.mask.w0_seed = in.get<std::uint64_t>("mask");
  if (c.mask.total != layout->maskable_size()) {
    throw ContainerError("bitmap length " + std::to_string(c.mask.total) + " does not match maskable count " +
                         std::to_string(layout->maskable_size()));
  }
  const auto packed = in.get_bytes(static_cast<std::size_t>((c.mask.total + 7) / 8), "mask bitmap");
  c.mask.bits = unpack_bits(packed, c.mask.total);

  const auto kernel_count = in.get<std::uint64_t>("kernel count");
  if (kernel_count != static_cast<std::uint64_t>(layout->maskable_size())) {
    throw ContainerError("kernel payload length does not match the bitmap");
  }
  Vector<float> values(layout->total_size());
  Vector<float> kernels(layout->maskable_size());
  for (Index i = 0; i < kernels.size(); ++i) kernels[i] = in.get<float>("kernel payload");
  const auto extras = in.get<std::uint64_t>("extra count");
  if (extras != static_cast<std::uint64_t>(layout->total_size() - layout->maskable_size())) {
    throw ContainerError("bias/norm payload length does not match the spec");
  }
  for (const auto& e : layout->entries()) {
    if (e.kind == ParamKind::kernel) continue;
    for (Index i = 0; i < e.size; ++i) values[e.offset + i] = in.get<float>("bias/norm payload");
  }
  c.weights = ParameterStore<float>(layout, std::move(values));
  c.weights.set_maskable_values(kernels);

  c.meta.data_seed = in.get<std::uint64_t>("metadata");
  c.meta.iterations = in.get<std::uint64_t>("metadata");
  c.meta.created_unix = in.get<std::int64_t>("metadata");
  if (in.remaining() != 0) throw ContainerError("trailing bytes after container payload");
  c.validate();
  return c;
}

void save_container(const ModelContainer& container, const std::filesystem::path& path) {
  const auto bytes = serialize_container(container);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw RuntimeError("failed writing " + path.string());
}

ModelContainer load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot open container " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_container(bytes);
}

}  // namespace pusnet
