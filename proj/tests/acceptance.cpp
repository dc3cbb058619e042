// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// when any criterion fails. Optional arguments select criteria by number.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "pusnet/container.hpp"
#include "pusnet/errors.hpp"
#include "pusnet/keymat.hpp"
#include "pusnet/metrics.hpp"
#include "pusnet/modelsteg.hpp"
#include "pusnet/network.hpp"
#include "pusnet/runtime.hpp"
#include "pusnet/splitmix.hpp"
#include "pusnet/trainer.hpp"
#include "support/gradcheck.hpp"
#include "support/process.hpp"
#include "support/synthetic.hpp"

using namespace pusnet;
namespace fs = std::filesystem;
using pusnet::testing::quoted;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0, double e = 0, double g = 0) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d, e, g);
  return buf;
}

const Key kEncoderKey{"k7Vd2QpX9mLr4TzB8nWc1HsY6fJa3GuE"};
const Key kDecoderKey{"R5tN0bKx8wPq3LmZ7vCj2YhD9sFg4AeU"};

// Criterion 1: sigma = 20 noise statistics.
Outcome noise_statistics() {
  std::mt19937_64 rng(20);
  std::vector<QualityReport> reports;
  EvalOptions float_test;
  float_test.quantize_test = false;
  for (int i = 0; i < 64; ++i) {
    const auto clean = pusnet::testing::synthetic_image(1000 + i, 128, 128);
    reports.push_back(evaluate_pair(clean, add_gaussian_noise(clean, 20.0, rng), float_test));
  }
  const auto m = mean_report(reports);
  const bool pass = std::abs(m.psnr - 22.11) <= 0.10 && std::abs(m.rmse - 20.00) <= 0.15 &&
                    std::abs(m.apd - 15.96) <= 0.15;
  return {pass, fmt("64 images: PSNR %.3f dB, RMSE %.3f, APD %.3f", m.psnr, m.rmse, m.apd)};
}

// Criterion 2: popcount exactness over random and heavily tied draws.
Outcome mask_density() {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int failures = 0;
  const int draws = 1000;
  for (int t = 0; t < draws; ++t) {
    const std::size_t n = 1 + rng() % 5000;
    std::vector<double> w(n);
    switch (t % 4) {
      case 0: for (auto& v : w) v = u(rng); break;
      case 1: for (auto& v : w) v = 0.1 * static_cast<int>(rng() % 3) - 0.1; break;  // three levels
      case 2: std::fill(w.begin(), w.end(), (t % 8 == 2) ? 0.0 : 0.5); break;         // all equal
      default: for (auto& v : w) v = (rng() & 1) ? 0.25 : -0.25; break;               // sign-only ties
    }
    double s = std::abs(u(rng));
    if (t % 50 == 0) s = 1.0;
    if (s == 0.0) s = 0.5;
    const auto m = generate_mask(w, s);
    const auto p = static_cast<Index>(std::floor(s * static_cast<double>(n)));
    if (m.popcount() != p || m.kept != p) ++failures;
  }
  // The default network at S = 0.9.
  const auto full = generate_mask(init_weights<float>(NetworkSpec{}, 7), 0.9);
  if (full.popcount() != static_cast<Index>(std::floor(0.9 * 630144.0))) ++failures;
  return {failures == 0, fmt("%.0f draws plus the default network, %.0f failures", draws, failures)};
}

// Criterion 3: trigger digests from two processes, and kept-position agreement.
Outcome trigger_determinism(const fs::path& work) {
  TrainConfig cfg;
  cfg.spec = pusnet::testing::toy_spec();
  cfg.encoder_key = kEncoderKey;
  cfg.decoder_key = kDecoderKey;
  cfg.deterministic = true;
  auto c = make_container(make_train_state(cfg), cfg);
  const fs::path model = work / "trigger.pusn";
  save_container(c, model);

  const std::string cli = quoted(PUSNET_CLI_PATH);
  const auto run = [&](const Key& key, const char* mode, const fs::path& dump) {
    return pusnet::testing::run_command(cli + " trigger --model " + quoted(model.string()) + " --key " +
                                        quoted(key.bytes) + " --mode " + mode + " -o " + quoted(dump.string()));
  };
  const auto a = run(kEncoderKey, "encode", work / "enc_a.bin");
  const auto b = run(kEncoderKey, "encode", work / "enc_b.bin");
  const auto d = run(kDecoderKey, "decode", work / "dec.bin");
  if (a.exit_code || b.exit_code || d.exit_code) return {false, "CLI trigger failed"};
  const bool same_digest = a.output == b.output && !a.output.empty();
  const bool matches_lib =
      a.output.find([&] {
        char hex[17];
        std::snprintf(hex, sizeof(hex), "%016llx",
                      static_cast<unsigned long long>(digest(trigger(c, kEncoderKey, Mode::encode))));
        return std::string(hex);
      }()) != std::string::npos;

  const auto read_floats = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::vector<float> v(static_cast<std::size_t>(fs::file_size(p)) / 4);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * 4));
    return v;
  };
  const auto enc = read_floats(work / "enc_a.bin"), dec = read_floats(work / "dec.bin");
  const auto offsets = c.weights.layout().maskable_flat_offsets();
  Index kept_mismatch = 0, hole_equal = 0;
  if (enc.size() != static_cast<std::size_t>(c.weights.size()) || dec.size() != enc.size())
    return {false, "dump size mismatch"};
  for (Index i = 0; i < c.mask.total; ++i) {
    const auto o = static_cast<std::size_t>(offsets[static_cast<std::size_t>(i)]);
    if (c.mask.keeps(i)) kept_mismatch += enc[o] != dec[o];
    else hole_equal += enc[o] == dec[o];
  }
  const bool pass = same_digest && matches_lib && kept_mismatch == 0;
  return {pass, std::string("two-process digests ") + (same_digest ? "equal" : "differ") +
                    (matches_lib ? ", match in-process digest" : ", differ from in-process digest") +
                    fmt(", %.0f kept mismatches, %.0f holes coincide", double(kept_mismatch), double(hole_equal))};
}

TrainConfig toy_config(int iterations) {
  TrainConfig cfg;
  cfg.spec = pusnet::testing::toy_spec();
  cfg.crop = 64;
  cfg.batch = 8;
  cfg.keep_ratio = 0.9;
  cfg.iterations = iterations;
  cfg.lr0 = 2e-3;
  cfg.halve_every = 1000;
  cfg.encoder_key = kEncoderKey;
  cfg.decoder_key = kDecoderKey;
  cfg.deterministic = true;
  return cfg;
}

DatasetManifest toy_dataset(const fs::path& work) {
  static std::optional<DatasetManifest> cached;
  if (!cached) {
    pusnet::testing::write_synthetic_dataset(work / "toy_train", 32, 96, 96, 11);
    cached = index_dataset(work / "toy_train", "");
  }
  return *cached;
}

// Criterion 4: holes and fills after 100 steps.
Outcome hole_preservation(const fs::path& work) {
  const auto cfg = toy_config(100);
  TrainState state = make_train_state(cfg);
  const auto fill_digest = [](const FillWeights& f) {
    return fnv1a64(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(f.values.data()),
                                                  static_cast<std::size_t>(f.values.size()) * sizeof(double)));
  };
  const auto enc0 = fill_digest(synthesize_fill(cfg.spec, cfg.encoder_key));
  const auto dec0 = fill_digest(synthesize_fill(cfg.spec, cfg.decoder_key));
  PatchSampler sampler(toy_dataset(work), {cfg.batch, cfg.crop, cfg.noise_sigma, cfg.data_seed, true});
  for (int i = 0; i < cfg.iterations; ++i) train_step(state, sampler.next(), cfg);
  const auto k = state.purified.maskable_values();
  Index nonzero = 0;
  for (Index i = 0; i < k.size(); ++i) nonzero += !state.mask.keeps(i) && k(i) != 0.0f;
  const bool fills = fill_digest(state.encoder_fill) == enc0 && fill_digest(state.decoder_fill) == dec0;
  return {nonzero == 0 && fills, fmt("%.0f steps, %.0f of %.0f holes non-zero, fills ", 100, double(nonzero),
                                     double(state.mask.holes())) +
                                     (fills ? "unchanged" : "changed")};
}

// Criterion 5: analytic vs central-difference gradients of each loss.
Outcome gradient_correctness() {
  const auto f = pusnet::testing::make_grad_fixture(5, 0.8);
  double worst = 0.0;
  Index checked = 0;
  bool holes = true;
  for (const LossWeights w : {LossWeights{1, 0, 0}, LossWeights{0, 1, 0}, LossWeights{0, 0, 1}}) {
    const auto r = pusnet::testing::check_gradient(f, w, 1e-5);
    worst = std::max(worst, r.max_rel_error);
    checked += r.checked;
    holes = holes && r.holes_zero;
  }
  return {worst <= 1e-4 && holes,
          fmt("%.0f shared-weight checks over 3 losses, max relative error %.3e", double(checked), worst)};
}

struct ToyRun {
  ModelContainer container;
  QualityReport noisy, denoised, stego, recovered;
  std::vector<LeakageSample> samples;
  double seconds = 0.0;
};

ToyRun train_toy(const fs::path& work) {
  ToyRun run;
  const auto cfg = toy_config(2000);
  const auto t0 = std::chrono::steady_clock::now();
  run.container = train(cfg, toy_dataset(work));
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_container(run.container, work / "toy_trained.pusn");

  std::vector<ImagePlane> held;
  for (int i = 0; i < 8; ++i) held.push_back(pusnet::testing::synthetic_image(900000 + i * 31, 64, 64));
  const auto enc = trigger(run.container, kEncoderKey, Mode::encode);
  const auto dec = trigger(run.container, kDecoderKey, Mode::decode);
  std::mt19937_64 rng(5);
  std::vector<QualityReport> nb, dn, st, rc;
  for (int i = 0; i < 8; ++i) {
    const auto& cover = held[i];
    const auto& secret = held[(i + 1) % 8];
    const auto noisy = add_gaussian_noise(cover, 20.0, rng);
    nb.push_back(evaluate_pair(cover, noisy));
    dn.push_back(evaluate_pair(cover, forward_denoise(run.container.weights, noisy)));
    const auto stego = quantize(forward_encode(enc, cover, secret));
    st.push_back(evaluate_pair(cover, stego));
    rc.push_back(evaluate_pair(secret, forward_decode(dec, stego)));
    run.samples.push_back({cover, secret, stego});
  }
  run.noisy = mean_report(nb);
  run.denoised = mean_report(dn);
  run.stego = mean_report(st);
  run.recovered = mean_report(rc);
  return run;
}

// Criterion 6: toy end-to-end thresholds on held-out images.
Outcome toy_training(const ToyRun& r) {
  const bool pass = r.denoised.psnr >= r.noisy.psnr + 4.0 && r.stego.psnr >= 25.0 && r.recovered.psnr >= 20.0;
  return {pass, fmt("denoise %.2f dB vs noisy %.2f dB, stego %.2f dB, recovered %.2f dB, %.0f s training",
                    r.denoised.psnr, r.noisy.psnr, r.stego.psnr, r.recovered.psnr, r.seconds)};
}

// Criterion 7: random-key triggering of the trained container.
Outcome leakage(const ToyRun& r) {
  LeakageOptions opt;
  opt.trials = 50;
  opt.excluded = {kEncoderKey, kDecoderKey};
  const auto rep = leakage_trials(r.container, r.samples, opt);
  const double sp = rep.stego_psnr.mean, rp = rep.recovered_psnr.mean;
  const bool pass = sp <= 15.0 && rp <= 15.0 && sp <= r.stego.psnr - 8.0 && rp <= r.recovered.psnr - 8.0;
  return {pass, fmt("50 keys: stego %.2f +- %.2f dB (correct %.2f), recovered %.2f +- %.2f dB (correct %.2f)", sp,
                    rep.stego_psnr.stddev, r.stego.psnr, rp, rep.recovered_psnr.stddev, r.recovered.psnr)};
}

// Criterion 8: EMD identity, symmetry, triangle inequality, translation.
Outcome emd_properties() {
  const auto a = init_weights<float>(pusnet::testing::toy_spec(), 1);
  bool identity = emd_weights(a, a) == 0.0;
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  const auto draw = [&] {
    std::vector<double> v(2 + rng() % 30);
    for (auto& x : v) x = n(rng) * 2.0 + n(rng);
    return v;
  };
  int symmetry = 0, triangle = 0, translation = 0;
  double worst_shift = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto x = draw(), y = draw(), z = draw();
    identity = identity && wasserstein1(x, x) == 0.0;
    symmetry += std::abs(wasserstein1(x, y) - wasserstein1(y, x)) > 1e-12;
    triangle += wasserstein1(x, z) > wasserstein1(x, y) + wasserstein1(y, z) + 1e-12;
    const double c = n(rng) * 3.0;
    auto shifted = x;
    for (auto& v : shifted) v += c;
    const double err = std::abs(wasserstein1(x, shifted) - std::abs(c));
    worst_shift = std::max(worst_shift, err);
    translation += err > 1e-9;
  }
  const bool pass = identity && symmetry == 0 && triangle == 0 && translation == 0;
  return {pass, std::string(identity ? "identity holds" : "identity fails") +
                    fmt(", 100 triples: %.0f symmetry, %.0f triangle, %.0f translation failures (max shift error "
                        "%.1e)",
                        symmetry, triangle, translation, worst_shift)};
}

// Criterion 9: PSNR/RMSE consistency and SSIM of identical pairs.
Outcome metric_consistency() {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> level(0, 255);
  double worst = 0.0;
  bool ssim_one = true;
  for (int t = 0; t < 100; ++t) {
    const Index h = 8 + static_cast<Index>(rng() % 40), w = 8 + static_cast<Index>(rng() % 40);
    ImagePlane a(3, h, w), b(3, h, w);
    const int spread = 1 + static_cast<int>(rng() % 60);
    for (Index i = 0; i < a.values.size(); ++i) {
      const int v = level(rng);
      a.values.data()[i] = v / 255.0f;
      b.values.data()[i] = std::clamp(v + level(rng) % (2 * spread + 1) - spread, 0, 255) / 255.0f;
    }
    const auto r = evaluate_pair(a, b);
    if (r.rmse > 0) worst = std::max(worst, std::abs(r.psnr - 20.0 * std::log10(255.0 / r.rmse)));
    ssim_one = ssim_one && evaluate_pair(a, a).ssim == 1.0 && evaluate_pair(b, b).ssim == 1.0;
  }
  return {worst <= 1e-6 && ssim_one,
          fmt("100 pairs: max |PSNR - 20 log10(255/RMSE)| = %.2e dB, ", worst) +
              (ssim_one ? "SSIM = 1 on identical pairs" : "SSIM != 1 on an identical pair")};
}

bool contains(const std::vector<std::uint8_t>& hay, const std::string& needle) {
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

// Criterion 10: round trip, corrupt fixtures and key-byte scan.
Outcome container_integrity(const fs::path& work, const std::optional<ToyRun>& trained) {
  std::vector<fs::path> files;
  if (trained) files.push_back(work / "toy_trained.pusn");
  {
    const auto cfg = toy_config(1);
    save_container(make_container(make_train_state(cfg), cfg), work / "fresh.pusn");
    files.push_back(work / "fresh.pusn");
  }
  bool round_trip = true, key_free = true;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    round_trip = round_trip && serialize_container(deserialize_container(bytes)) == bytes;
    for (const Key* k : {&kEncoderKey, &kDecoderKey}) {
      const std::uint64_t seed = derive_seed(*k);
      std::string seed_le(8, '\0');
      for (int i = 0; i < 8; ++i) seed_le[static_cast<std::size_t>(i)] = static_cast<char>(seed >> (8 * i));
      key_free = key_free && !contains(bytes, k->bytes) && !contains(bytes, k->bytes.substr(0, 6)) &&
                 !contains(bytes, seed_le);
    }
  }

  std::ifstream in(files.back(), std::ios::binary);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto c = deserialize_container(bytes);
  int accepted = 0, fixtures = 0;
  const auto rejects = [&](const std::vector<std::uint8_t>& b) {
    ++fixtures;
    try {
      deserialize_container(b);
      ++accepted;
    } catch (const ContainerError&) {
    }
  };
  // Hole violation: a non-zero float written into the first hole.
  {
    Index hole = 0;
    while (c.mask.keeps(hole)) ++hole;
    const std::size_t n = static_cast<std::size_t>(c.mask.total);
    const std::size_t extras = static_cast<std::size_t>(c.weights.size()) - n;
    auto bad = bytes;
    const float v = 0.01f;
    std::memcpy(bad.data() + bad.size() - 24 - (8 + 4 * extras) - 4 * n + 4 * static_cast<std::size_t>(hole), &v, 4);
    rejects(bad);
  }
  for (std::size_t cut : {std::size_t{2}, std::size_t{16}, bytes.size() / 3, bytes.size() - 1}) {
    rejects(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut)));
  }
  const bool pass = round_trip && key_free && accepted == 0;
  return {pass, fmt("%.0f containers round-trip ", double(files.size())) + (round_trip ? "byte-identical" : "BROKEN") +
                    fmt(", %.0f of %.0f corrupt fixtures accepted, ", accepted, fixtures) +
                    (key_free ? "no key bytes found" : "KEY BYTES FOUND")};
}

}  // namespace

int main(int argc, char** argv) {
  pusnet::retain_heap_memory();
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  const auto want = [&](int n) { return selected.count(n) > 0; };

  const fs::path work = pusnet::testing::scratch_dir("acceptance");
  std::map<int, Outcome> results;
  const auto record = [&](int n, const std::function<Outcome()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail
              << fmt(" [%.1f s]", secs) << std::endl;
    results[n] = o;
  };

  if (want(1)) record(1, noise_statistics);
  if (want(2)) record(2, mask_density);
  if (want(3)) record(3, [&] { return trigger_determinism(work); });
  if (want(4)) record(4, [&] { return hole_preservation(work); });
  if (want(5)) record(5, gradient_correctness);
  std::optional<ToyRun> toy;
  if (want(6) || want(7)) {
    try {
      toy = train_toy(work);
    } catch (const std::exception& e) {
      std::cout << "toy training failed: " << e.what() << std::endl;
    }
  }
  const auto need_toy = [&](const std::function<Outcome(const ToyRun&)>& f) {
    return [&, f] { return toy ? f(*toy) : Outcome{false, "no trained toy model"}; };
  };
  if (want(6)) record(6, need_toy(toy_training));
  if (want(7)) record(7, need_toy(leakage));
  if (want(8)) record(8, emd_properties);
  if (want(9)) record(9, metric_consistency);
  if (want(10)) record(10, [&] { return container_integrity(work, toy); });

  const auto failed = std::count_if(results.begin(), results.end(), [](const auto& r) { return !r.second.pass; });
  std::cout << results.size() - static_cast<std::size_t>(failed) << " of " << results.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
