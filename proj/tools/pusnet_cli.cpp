// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: training, the three forward modes, key triggering,
// quality evaluation and model steganalysis.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pusnet/container.hpp"
#include "pusnet/datapipe.hpp"
#include "pusnet/errors.hpp"
#include "pusnet/keymat.hpp"
#include "pusnet/metrics.hpp"
#include "pusnet/modelsteg.hpp"
#include "pusnet/network.hpp"
#include "pusnet/runtime.hpp"
#include "pusnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace pusnet;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitValidation = 2;

ImagePlane load_input(const fs::path& path, int resize) {
  ImagePlane image = read_image(path);
  return resize > 0 ? resize_bilinear(image, resize, resize) : image;
}

Key require_key(const std::string& key, const char* what) {
  if (key.empty()) throw ValidationError(std::string("missing ") + what + " (flag or environment variable)");
  return Key{key};
}

std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw RuntimeError("cannot write " + path);
  out << text;
}

void dump_store(const fs::path& path, const ParameterStore<float>& store) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("cannot write " + path.string());
  for (Index i = 0; i < store.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(store.values()[i]);
    const char bytes[4] = {static_cast<char>(bits), static_cast<char>(bits >> 8), static_cast<char>(bits >> 16),
                           static_cast<char>(bits >> 24)};
    out.write(bytes, 4);
  }
}

}  // namespace

int main(int argc, char** argv) {
  pusnet::retain_heap_memory();
  CLI::App app{"Purified network with key-triggered hidden steganographic networks"};
  app.require_subcommand(1);

  std::string model, output, key, mode_text = "encode", config_path, dataset, split, log_path;
  std::string encoder_key, decoder_key, baseline, stego_path, manifest_out;
  std::vector<std::string> inputs;
  int resize = 0, trials = 50, iterations = 0;
  double sigma = 20.0;
  std::uint64_t seed = 0x6c65616b;

  auto* train_cmd = app.add_subcommand("train", "Train a purified model from a config file");
  train_cmd->add_option("--config", config_path, "key = value training config")->required();
  train_cmd->add_option("--dataset", dataset, "Image directory (overrides the config)");
  train_cmd->add_option("--split", split, "Dataset split subdirectory");
  train_cmd->add_option("--iterations", iterations, "Override the iteration budget");
  train_cmd->add_option("--encoder-key", encoder_key, "Key that triggers the encoder")->envname("PUSNET_ENCODER_KEY");
  train_cmd->add_option("--decoder-key", decoder_key, "Key that triggers the decoder")->envname("PUSNET_DECODER_KEY");
  train_cmd->add_option("--log", log_path, "Per-iteration metrics log");
  train_cmd->add_option("--manifest", manifest_out, "Write the dataset manifest here");
  train_cmd->add_option("-o,--output", output, "Output container")->required();

  auto* denoise_cmd = app.add_subcommand("denoise", "Denoise an image with the purified model");
  denoise_cmd->add_option("--model", model)->required();
  denoise_cmd->add_option("input", inputs, "Noisy image")->required()->expected(1);
  denoise_cmd->add_option("-o,--output", output)->required();
  denoise_cmd->add_option("--resize", resize, "Resize inputs to N x N first");

  auto* embed_cmd = app.add_subcommand("embed", "Hide a secret image in a cover image");
  embed_cmd->add_option("--model", model)->required();
  embed_cmd->add_option("--key", key, "Encoder key")->envname("PUSNET_KEY");
  embed_cmd->add_option("images", inputs, "Cover and secret images")->required()->expected(2);
  embed_cmd->add_option("-o,--output", output)->required();
  embed_cmd->add_option("--resize", resize, "Resize inputs to N x N first");

  auto* recover_cmd = app.add_subcommand("recover", "Recover the secret image from a stego image");
  recover_cmd->add_option("--model", model)->required();
  recover_cmd->add_option("--key", key, "Decoder key")->envname("PUSNET_KEY");
  recover_cmd->add_option("input", inputs, "Stego image")->required()->expected(1);
  recover_cmd->add_option("-o,--output", output)->required();
  recover_cmd->add_option("--resize", resize, "Resize inputs to N x N first");

  auto* trigger_cmd = app.add_subcommand("trigger", "Fill the holes with key-derived weights and dump them");
  trigger_cmd->add_option("--model", model)->required();
  trigger_cmd->add_option("--key", key)->envname("PUSNET_KEY");
  trigger_cmd->add_option("--mode", mode_text, "encode, decode or denoise");
  trigger_cmd->add_option("-o,--output", output, "Raw little-endian float32 dump of the dense weights");

  auto* eval_cmd = app.add_subcommand("eval", "Quality of reference/test image pairs as CSV");
  eval_cmd->add_option("pairs", inputs, "reference test [reference test ...]")->required();
  eval_cmd->add_option("-o,--output", output, "CSV file (stdout by default)");

  auto* mask_cmd = app.add_subcommand("mask-info", "Summarize a container's sparse mask");
  mask_cmd->add_option("--model", model)->required();

  auto* steg_cmd = app.add_subcommand("steg-analyze", "Model steganalysis");
  steg_cmd->require_subcommand(1);
  auto* emd_cmd = steg_cmd->add_subcommand("emd", "Pairwise kernel-weight EMD between containers");
  emd_cmd->add_option("models", inputs)->required();
  emd_cmd->add_option("-o,--output", output);
  auto* leak_cmd = steg_cmd->add_subcommand("leakage", "Random-key triggering attack");
  leak_cmd->add_option("--model", model)->required();
  leak_cmd->add_option("images", inputs, "cover secret [cover secret ...]")->required();
  leak_cmd->add_option("--stego", stego_path, "Genuine stego image (single pair only)");
  leak_cmd->add_option("--encoder-key", encoder_key, "Genuine encoder key, used to build stego images")
      ->envname("PUSNET_ENCODER_KEY");
  leak_cmd->add_option("--trials", trials);
  leak_cmd->add_option("--seed", seed, "Random key stream seed");
  leak_cmd->add_option("--resize", resize);
  leak_cmd->add_option("-o,--output", output);
  auto* gap_cmd = steg_cmd->add_subcommand("gap", "Denoising performance gap against a clean baseline");
  gap_cmd->add_option("--model", model)->required();
  gap_cmd->add_option("--baseline", baseline)->required();
  gap_cmd->add_option("images", inputs, "Clean images")->required();
  gap_cmd->add_option("--sigma", sigma);
  gap_cmd->add_option("--seed", seed);
  gap_cmd->add_option("--resize", resize);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*train_cmd) {
      TrainConfig config = load_train_config(config_path);
      if (!dataset.empty()) config.dataset = dataset;
      if (!split.empty()) config.split = split;
      if (iterations > 0) config.iterations = iterations;
      config.encoder_key = require_key(encoder_key, "encoder key");
      config.decoder_key = require_key(decoder_key, "decoder key");
      if (config.dataset.empty()) throw ValidationError("no dataset given");
      const DatasetManifest manifest = index_dataset(config.dataset, config.split);
      if (manifest.skipped > 0) std::cerr << "warning: skipped " << manifest.skipped << " undecodable files\n";
      if (!manifest_out.empty()) write_manifest(manifest, manifest_out);
      std::ofstream log;
      if (!log_path.empty()) log.open(log_path);
      const auto container = train(config, manifest, log_path.empty() ? nullptr : &log);
      save_container(container, output);
      std::cout << "trained " << container.meta.iterations << " iterations on " << manifest.entries.size()
                << " images -> " << output << '\n';
    } else if (*denoise_cmd) {
      const auto container = load_container(model);
      write_png(output, forward_denoise(container.weights, load_input(inputs[0], resize)));
    } else if (*embed_cmd) {
      const auto container = load_container(model);
      const auto encoder = trigger(container, require_key(key, "encoder key"), Mode::encode);
      write_png(output, forward_encode(encoder, load_input(inputs[0], resize), load_input(inputs[1], resize)));
    } else if (*recover_cmd) {
      const auto container = load_container(model);
      const auto decoder = trigger(container, require_key(key, "decoder key"), Mode::decode);
      write_png(output, forward_decode(decoder, load_input(inputs[0], resize)));
    } else if (*trigger_cmd) {
      const Mode mode = parse_mode(mode_text);
      const auto container = load_container(model);
      const auto dense = trigger(container, mode == Mode::denoise ? Key{} : require_key(key, "key"), mode);
      if (!output.empty()) dump_store(output, dense);
      std::cout << "mode " << mode_name(mode) << " values " << dense.size() << " digest " << hex64(digest(dense))
                << '\n';
    } else if (*eval_cmd) {
      if (inputs.size() % 2 != 0) throw ValidationError("eval expects reference/test pairs");
      std::string csv = csv_header() + "\n";
      for (std::size_t i = 0; i < inputs.size(); i += 2) {
        csv += csv_row(fs::path(inputs[i + 1]).filename().string(),
                       evaluate_pair(read_image(inputs[i]), read_image(inputs[i + 1]))) +
               "\n";
      }
      write_text(output, csv);
    } else if (*mask_cmd) {
      const auto container = load_container(model);
      const auto& m = container.mask;
      std::cout << std::setprecision(8) << "spec " << describe(container.spec()) << "\n"
                << "maskable " << m.total << "\nkept " << m.kept << "\nholes " << m.holes() << "\nkeep_ratio "
                << m.keep_ratio << "\ndensity " << static_cast<double>(m.popcount()) / static_cast<double>(m.total)
                << "\nthreshold " << m.threshold << "\nw0_seed " << m.w0_seed << "\niterations "
                << container.meta.iterations << '\n';
    } else if (*emd_cmd) {
      std::vector<ParameterStore<float>> stores;
      std::vector<std::string> names;
      for (const auto& path : inputs) {
        stores.push_back(load_container(path).weights);
        names.push_back(fs::path(path).filename().string());
      }
      write_text(output, emd_table(emd_matrix(stores), names));
    } else if (*leak_cmd) {
      if (inputs.size() % 2 != 0) throw ValidationError("leakage expects cover/secret pairs");
      const auto container = load_container(model);
      std::vector<LeakageSample> samples;
      std::optional<ParameterStore<float>> encoder;
      if (stego_path.empty()) {
        encoder = trigger(container, require_key(encoder_key, "--stego image or encoder key"), Mode::encode);
      } else if (inputs.size() != 2) {
        throw ValidationError("--stego works with a single cover/secret pair");
      }
      for (std::size_t i = 0; i < inputs.size(); i += 2) {
        LeakageSample s{load_input(inputs[i], resize), load_input(inputs[i + 1], resize), {}};
        s.stego = encoder ? quantize(forward_encode(*encoder, s.cover, s.secret)) : load_input(stego_path, resize);
        samples.push_back(std::move(s));
      }
      LeakageOptions options;
      options.trials = trials;
      options.key_seed = seed;
      if (!encoder_key.empty()) options.excluded.push_back(Key{encoder_key});
      write_text(output, leakage_csv(leakage_trials(container, samples, options)));
    } else if (*gap_cmd) {
      const auto purified = load_container(model);
      const auto clean_model = load_container(baseline);
      std::mt19937_64 rng(seed);
      std::vector<NoisyPair> pairs;
      for (const auto& path : inputs) {
        ImagePlane clean = quantize(load_input(path, resize));
        ImagePlane noisy = add_gaussian_noise(clean, sigma, rng);
        pairs.push_back(NoisyPair{std::move(noisy), std::move(clean)});
      }
      const auto gap = performance_gap(purified, clean_model, pairs);
      std::cout << "delta_psnr,delta_ssim,delta_apd,delta_rmse\n"
                << gap.psnr << ',' << gap.ssim << ',' << gap.apd << ',' << gap.rmse << '\n';
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
