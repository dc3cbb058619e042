// SPDX-License-Identifier: Apache-2.0
#include "pusnet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "pusnet/network.hpp"

namespace pusnet {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out{};
  if (!(in >> out) || !(in >> std::ws).eof()) {
    throw ValidationError("config: cannot parse '" + value + "' for " + key);
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "no") return false;
  throw ValidationError("config: expected a boolean for " + key);
}

template <typename Scalar>
double squared_sum(const Planes<Scalar>& a, const Planes<Scalar>& b) {
  return (a.values - b.values).template cast<double>().squaredNorm();
}

void require_shapes(const auto& a, const auto& b, const char* what) {
  if (a.size() != b.size()) throw ValidationError(std::string(what) + ": batch sizes differ");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].same_shape(b[i])) throw ValidationError(std::string(what) + ": shape mismatch");
  }
}

template <typename Scalar>
Index element_count(const std::vector<Planes<Scalar>>& planes) {
  Index n = 0;
  for (const auto& p : planes) n += p.values.size();
  return n;
}

}  // namespace

void TrainConfig::validate() const {
  spec.validate();
  if (lambda_emb < 0 || lambda_rec < 0 || lambda_den < 0) throw ValidationError("loss weights must be >= 0");
  if (!(lr0 > 0)) throw ValidationError("lr0 must be positive");
  if (halve_every <= 0) throw ValidationError("halve_every must be positive");
  if (weight_decay < 0) throw ValidationError("weight_decay must be >= 0");
  if (batch < 2 || batch % 2 != 0) throw ValidationError("batch must be even (half covers, half secrets)");
  if (crop <= 0) throw ValidationError("crop must be positive");
  if (noise_sigma < 0) throw ValidationError("noise_sigma must be >= 0");
  if (!(keep_ratio > 0 && keep_ratio <= 1)) throw ValidationError("keep_ratio must lie in (0, 1]");
  if (iterations <= 0) throw ValidationError("iteration budget must be positive");
}

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig config;
  std::map<std::string, std::string> values;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("config line " + std::to_string(line_no) + ": expected key = value");
    values[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }

  bool explicit_bias = false;
  for (const auto& [key, value] : values) {
    auto& s = config.spec;
    if (key == "layers") s.num_conv_layers = parse_number<int>(key, value);
    else if (key == "channels") s.channels = parse_number<int>(key, value);
    else if (key == "kernel") s.kernel = parse_number<int>(key, value);
    else if (key == "gn_groups") s.gn_groups = parse_number<int>(key, value);
    else if (key == "lrelu_slope") s.lrelu_slope = parse_number<double>(key, value);
    else if (key == "skip_start") s.skip_start = parse_number<int>(key, value);
    else if (key == "skip_end") s.skip_end = parse_number<int>(key, value);
    else if (key == "split_layer") s.split_layer = parse_number<int>(key, value);
    else if (key == "bias_layers") {
      explicit_bias = true;
      s.bias_layers.clear();
      std::istringstream list(value);
      std::string item;
      while (std::getline(list, item, ',')) s.bias_layers.push_back(parse_number<int>(key, trim(item)));
    }
    else if (key == "lambda_emb") config.lambda_emb = parse_number<double>(key, value);
    else if (key == "lambda_rec") config.lambda_rec = parse_number<double>(key, value);
    else if (key == "lambda_den") config.lambda_den = parse_number<double>(key, value);
    else if (key == "lr0") config.lr0 = parse_number<double>(key, value);
    else if (key == "halve_every") config.halve_every = parse_number<int>(key, value);
    else if (key == "weight_decay") config.weight_decay = parse_number<double>(key, value);
    else if (key == "batch") config.batch = parse_number<int>(key, value);
    else if (key == "crop") config.crop = parse_number<int>(key, value);
    else if (key == "noise_sigma") config.noise_sigma = parse_number<double>(key, value);
    else if (key == "keep_ratio" || key == "S") config.keep_ratio = parse_number<double>(key, value);
    else if (key == "iterations") config.iterations = parse_number<int>(key, value);
    else if (key == "w0_seed") config.w0_seed = parse_number<std::uint64_t>(key, value);
    else if (key == "data_seed") config.data_seed = parse_number<std::uint64_t>(key, value);
    else if (key == "checkpoint_every") config.checkpoint_every = parse_number<int>(key, value);
    else if (key == "checkpoint_path") config.checkpoint_path = value;
    else if (key == "dataset") config.dataset = value;
    else if (key == "split") config.split = value;
    else if (key == "deterministic") config.deterministic = parse_bool(key, value);
    else if (key.find("key") != std::string::npos) {
      throw ValidationError("config: key material is not accepted in config files (" + key + ")");
    } else {
      throw ValidationError("config: unknown setting '" + key + "'");
    }
  }
  if (!explicit_bias) config.spec.bias_layers = {1, config.spec.num_conv_layers};
  config.validate();
  return config;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeError("cannot read config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_train_config(buffer.str());
}

double lr_at(int iteration, const TrainConfig& config) {
  if (iteration < 0) throw ValidationError("iteration must be >= 0");
  return std::ldexp(config.lr0, -(iteration / config.halve_every));
}

template <typename Scalar>
double batch_mse(const std::vector<Planes<Scalar>>& a, const std::vector<Planes<Scalar>>& b) {
  require_shapes(a, b, "mse");
  const Index n = element_count(a);
  if (n == 0) throw ValidationError("mse: empty batch");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += squared_sum(a[i], b[i]);
  return sum / static_cast<double>(n);
}

template <typename Scalar>
LossTriple compute_losses(const std::vector<Planes<Scalar>>& stego, const std::vector<Planes<Scalar>>& cover,
                          const std::vector<Planes<Scalar>>& recovered, const std::vector<Planes<Scalar>>& secret,
                          const std::vector<Planes<Scalar>>& denoised, const std::vector<Planes<Scalar>>& clean) {
  return LossTriple{batch_mse(stego, cover), batch_mse(recovered, secret), batch_mse(denoised, clean)};
}

template <typename Scalar>
LossTriple joint_gradient(const ParameterStore<Scalar>& purified, const SparseMask& mask,
                          const FillWeights& encoder_fill, const FillWeights& decoder_fill,
                          const BatchOf<Scalar>& batch, const LossWeights& weights, Vector<Scalar>& grad) {
  using Net = Network<Scalar>;
  using Mat = typename Net::Mat;
  const Net net(purified.layout_ptr());
  grad = Vector<Scalar>::Zero(purified.size());
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  LossTriple losses{nan, nan, nan};

  if (weights.embed != 0.0 || weights.recover != 0.0) {
    require_shapes(batch.covers, batch.secrets, "cover/secret");
    const auto encoder = fill_holes(purified, mask, encoder_fill);
    const auto decoder = fill_holes(purified, mask, decoder_fill);
    const double n = static_cast<double>(element_count(batch.covers));
    const Scalar scale_emb = static_cast<Scalar>(2.0 * weights.embed / n);
    const Scalar scale_rec = static_cast<Scalar>(2.0 * weights.recover / n);
    double sum_emb = 0.0, sum_rec = 0.0;
    for (std::size_t i = 0; i < batch.covers.size(); ++i) {
      typename Net::EncodeTape encode_tape;
      typename Net::PathTape decode_tape;
      const auto stego = net.forward_encode(encoder, batch.covers[i], batch.secrets[i], &encode_tape);
      const auto recovered = net.forward(decoder, stego, &decode_tape);
      const Mat diff_emb = stego.values - batch.covers[i].values;
      const Mat diff_rec = recovered.values - batch.secrets[i].values;
      sum_emb += diff_emb.template cast<double>().squaredNorm();
      sum_rec += diff_rec.template cast<double>().squaredNorm();
      Mat d_stego = net.backward(decoder, decode_tape, (scale_rec * diff_rec).eval(), grad);
      d_stego += scale_emb * diff_emb;
      net.backward_encode(encoder, encode_tape, d_stego, grad);
    }
    losses.embed = sum_emb / n;
    losses.recover = sum_rec / n;
  }

  if (weights.denoise != 0.0) {
    require_shapes(batch.noisy, batch.clean, "noisy/clean");
    const double n = static_cast<double>(element_count(batch.clean));
    const Scalar scale = static_cast<Scalar>(2.0 * weights.denoise / n);
    double sum = 0.0;
    for (std::size_t i = 0; i < batch.clean.size(); ++i) {
      typename Net::PathTape tape;
      const auto denoised = net.forward(purified, batch.noisy[i], &tape);
      const Mat diff = denoised.values - batch.clean[i].values;
      sum += diff.template cast<double>().squaredNorm();
      net.backward(purified, tape, (scale * diff).eval(), grad);
    }
    losses.denoise = sum / n;
  }

  for (const auto& seg : purified.layout().maskable_segments()) {
    for (Index i = 0; i < seg.size; ++i) {
      if (!mask.keeps(seg.maskable_offset + i)) grad[seg.flat_offset + i] = Scalar(0);
    }
  }
  return losses;
}

template double batch_mse<float>(const std::vector<Planes<float>>&, const std::vector<Planes<float>>&);
template double batch_mse<double>(const std::vector<Planes<double>>&, const std::vector<Planes<double>>&);
template LossTriple compute_losses<float>(const std::vector<Planes<float>>&, const std::vector<Planes<float>>&,
                                          const std::vector<Planes<float>>&, const std::vector<Planes<float>>&,
                                          const std::vector<Planes<float>>&, const std::vector<Planes<float>>&);
template LossTriple compute_losses<double>(const std::vector<Planes<double>>&, const std::vector<Planes<double>>&,
                                           const std::vector<Planes<double>>&, const std::vector<Planes<double>>&,
                                           const std::vector<Planes<double>>&, const std::vector<Planes<double>>&);
template LossTriple joint_gradient<float>(const ParameterStore<float>&, const SparseMask&, const FillWeights&,
                                          const FillWeights&, const BatchOf<float>&, const LossWeights&,
                                          Vector<float>&);
template LossTriple joint_gradient<double>(const ParameterStore<double>&, const SparseMask&, const FillWeights&,
                                           const FillWeights&, const BatchOf<double>&, const LossWeights&,
                                           Vector<double>&);

TrainState make_train_state(const TrainConfig& config) {
  config.validate();
  TrainState state;
  state.purified = init_weights<float>(config.spec, config.w0_seed);
  state.mask = generate_mask(state.purified, config.keep_ratio);
  state.mask.w0_seed = config.w0_seed;
  zero_holes(state.purified, state.mask);
  state.encoder_fill = synthesize_fill(config.spec, config.encoder_key);
  state.decoder_fill = synthesize_fill(config.spec, config.decoder_key);
  state.shared = shared_indicator(state.purified.layout(), state.mask);
  state.first_moment = Vector<float>::Zero(state.purified.size());
  state.second_moment = Vector<float>::Zero(state.purified.size());
  return state;
}

StepResult train_step(TrainState& state, const TrainBatch& batch, const TrainConfig& config) {
  Vector<float> grad;
  const LossWeights weights{config.lambda_emb, config.lambda_rec, config.lambda_den};
  StepResult result;
  result.losses =
      joint_gradient(state.purified, state.mask, state.encoder_fill, state.decoder_fill, batch, weights, grad);
  const auto bad = [](double loss, double weight) { return weight != 0.0 && !std::isfinite(loss); };
  if (bad(result.losses.embed, weights.embed) || bad(result.losses.recover, weights.recover) ||
      bad(result.losses.denoise, weights.denoise) || !grad.allFinite()) {
    std::ostringstream msg;
    msg << "non-finite loss at iteration " << state.iteration << ": embed=" << result.losses.embed
        << " recover=" << result.losses.recover << " denoise=" << result.losses.denoise;
    throw RuntimeError(msg.str());
  }

  result.lr = lr_at(state.iteration, config);
  const int t = state.iteration + 1;
  const float lr = static_cast<float>(result.lr);
  const float b1 = static_cast<float>(config.beta1), b2 = static_cast<float>(config.beta2);
  const float correction1 = static_cast<float>(1.0 - std::pow(config.beta1, t));
  const float correction2 = static_cast<float>(1.0 - std::pow(config.beta2, t));
  const float eps = static_cast<float>(config.adam_epsilon);
  const float decay = static_cast<float>(config.weight_decay);
  auto& w = state.purified.values();
  auto& m = state.first_moment;
  auto& v = state.second_moment;
  for (Index i = 0; i < w.size(); ++i) {
    if (!state.shared[static_cast<std::size_t>(i)]) continue;
    const float g = grad[i];
    m[i] = b1 * m[i] + (1.0f - b1) * g;
    v[i] = b2 * v[i] + (1.0f - b2) * g * g;
    const float step = (m[i] / correction1) / (std::sqrt(v[i] / correction2) + eps);
    w[i] -= lr * (step + decay * w[i]);
  }
  ++state.iteration;
  return result;
}

ModelContainer make_container(const TrainState& state, const TrainConfig& config) {
  ModelContainer c;
  c.mask = state.mask;
  c.weights = state.purified;
  c.meta.data_seed = config.data_seed;
  c.meta.iterations = static_cast<std::uint64_t>(state.iteration);
  c.meta.created_unix =
      config.deterministic
          ? 0
          : std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
                .count();
  c.validate();
  return c;
}

ModelContainer train(const TrainConfig& config, const DatasetManifest& dataset, std::ostream* metrics_log,
                     const StepObserver& observer) {
  config.validate();
  TrainState state = make_train_state(config);
  PatchSampler sampler(dataset, SamplerOptions{config.batch, config.crop, config.noise_sigma, config.data_seed, true});
  for (int it = 0; it < config.iterations; ++it) {
    const TrainBatch batch = sampler.next();
    const StepResult step = train_step(state, batch, config);
    if (metrics_log) {
      *metrics_log << it << ' ' << step.losses.embed << ' ' << step.losses.recover << ' ' << step.losses.denoise
                   << ' ' << step.lr << '\n';
    }
    if (observer) observer(it, step);
    if (config.checkpoint_every > 0 && !config.checkpoint_path.empty() && (it + 1) % config.checkpoint_every == 0) {
      save_container(make_container(state, config), config.checkpoint_path);
    }
  }
  return make_container(state, config);
}

}  // namespace pusnet
