// SPDX-License-Identifier: Apache-2.0
#include "pusnet/modelsteg.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "pusnet/errors.hpp"
#include "pusnet/network.hpp"
#include "pusnet/splitmix.hpp"

namespace pusnet {

namespace {

std::vector<double> sorted_kernels(const ParameterStore<float>& store) {
  const Vector<float> k = store.maskable_values();
  std::vector<double> out(k.data(), k.data() + k.size());
  std::sort(out.begin(), out.end());
  return out;
}

Stat stat_of(const std::vector<double>& xs) {
  Stat s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(xs.size()));
  return s;
}

}  // namespace

double wasserstein1(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ValidationError("EMD needs two non-empty samples");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  // Walk the merged breakpoints i/n and j/m of the two quantile functions.
  const double n = static_cast<double>(x.size()), m = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double u = 0.0, total = 0.0;
  while (i < x.size() && j < y.size()) {
    const double next_a = static_cast<double>(i + 1) / n;
    const double next_b = static_cast<double>(j + 1) / m;
    const double next = std::min(next_a, next_b);
    total += (next - u) * std::abs(x[i] - y[j]);
    u = next;
    // Cross-multiplied comparison keeps equal breakpoints exact.
    const auto lhs = static_cast<unsigned long long>(i + 1) * y.size();
    const auto rhs = static_cast<unsigned long long>(j + 1) * x.size();
    if (lhs <= rhs) ++i;
    if (rhs <= lhs) ++j;
  }
  return total;
}

double emd_weights(const ParameterStore<float>& a, const ParameterStore<float>& b) {
  const auto x = sorted_kernels(a);
  const auto y = sorted_kernels(b);
  return wasserstein1(x, y);
}

std::vector<std::vector<double>> emd_matrix(std::span<const ParameterStore<float>> stores) {
  std::vector<std::vector<double>> out(stores.size(), std::vector<double>(stores.size(), 0.0));
  for (std::size_t i = 0; i < stores.size(); ++i) {
    for (std::size_t j = i + 1; j < stores.size(); ++j) out[i][j] = out[j][i] = emd_weights(stores[i], stores[j]);
  }
  return out;
}

std::string random_key(std::uint64_t& stream_state) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
  SplitMix64 rng(stream_state);
  std::string key(32, ' ');
  for (char& c : key) c = kAlphabet[rng() % (sizeof(kAlphabet) - 1)];
  stream_state = rng();
  return key;
}

void summarize(LeakageReport& report) {
  if (report.trials.empty()) throw ValidationError("leakage report has no trials");
  std::vector<double> sp, sa, rp, ra;
  for (const auto& t : report.trials) {
    sp.push_back(t.stego_vs_cover.psnr);
    sa.push_back(t.stego_vs_cover.apd);
    rp.push_back(t.recovered_vs_secret.psnr);
    ra.push_back(t.recovered_vs_secret.apd);
  }
  report.stego_psnr = stat_of(sp);
  report.stego_apd = stat_of(sa);
  report.recovered_psnr = stat_of(rp);
  report.recovered_apd = stat_of(ra);
}

LeakageReport leakage_trials(const ModelContainer& container, std::span<const LeakageSample> samples,
                             const LeakageOptions& options) {
  if (samples.empty()) throw ValidationError("leakage trials need at least one evaluation image");
  if (options.trials < 1) throw ValidationError("leakage trials need n >= 1");
  container.validate();
  const Network<float> net(container.weights.layout_ptr());

  LeakageReport report;
  std::uint64_t stream = options.key_seed;
  while (static_cast<int>(report.trials.size()) < options.trials) {
    Key key{random_key(stream)};
    const bool excluded = std::any_of(options.excluded.begin(), options.excluded.end(),
                                      [&](const Key& k) { return k.bytes == key.bytes; });
    if (excluded) continue;
    const auto encoder = trigger(container, key, Mode::encode);
    const auto decoder = trigger(container, key, Mode::decode);
    std::vector<QualityReport> stego_reports, recovered_reports;
    for (const auto& s : samples) {
      stego_reports.push_back(evaluate_pair(s.cover, net.forward_encode(encoder, s.cover, s.secret)));
      recovered_reports.push_back(evaluate_pair(s.secret, net.forward(decoder, s.stego)));
    }
    report.trials.push_back(LeakageTrial{key.bytes, mean_report(stego_reports), mean_report(recovered_reports)});
  }
  summarize(report);
  return report;
}

QualityDelta performance_gap(const ModelContainer& purified, const ModelContainer& baseline,
                             std::span<const NoisyPair> noisy_set) {
  if (!(purified.spec() == baseline.spec())) throw ValidationError("performance gap needs containers of one spec");
  if (noisy_set.empty()) throw ValidationError("performance gap needs a non-empty noisy set");
  const Network<float> net(purified.weights.layout_ptr());
  std::vector<QualityReport> p, b;
  for (const auto& pair : noisy_set) {
    p.push_back(evaluate_pair(pair.clean, net.forward(purified.weights, pair.noisy)));
    b.push_back(evaluate_pair(pair.clean, net.forward(baseline.weights, pair.noisy)));
  }
  const auto mp = mean_report(p), mb = mean_report(b);
  return QualityDelta{mb.psnr - mp.psnr, mb.ssim - mp.ssim, mb.apd - mp.apd, mb.rmse - mp.rmse};
}

std::string leakage_csv(const LeakageReport& report) {
  std::ostringstream out;
  out << "trial,key,stego_psnr,stego_apd,recovered_psnr,recovered_apd\n" << std::fixed << std::setprecision(4);
  for (std::size_t i = 0; i < report.trials.size(); ++i) {
    const auto& t = report.trials[i];
    out << i << ',' << t.key << ',' << t.stego_vs_cover.psnr << ',' << t.stego_vs_cover.apd << ','
        << t.recovered_vs_secret.psnr << ',' << t.recovered_vs_secret.apd << '\n';
  }
  out << "# summary: stego psnr " << report.stego_psnr.mean << " +- " << report.stego_psnr.stddev << ", apd "
      << report.stego_apd.mean << " +- " << report.stego_apd.stddev << "; recovered psnr "
      << report.recovered_psnr.mean << " +- " << report.recovered_psnr.stddev << ", apd "
      << report.recovered_apd.mean << " +- " << report.recovered_apd.stddev << '\n';
  return out.str();
}

std::string emd_table(const std::vector<std::vector<double>>& matrix, const std::vector<std::string>& names) {
  std::ostringstream out;
  out << "model";
  for (const auto& n : names) out << ',' << n;
  out << '\n' << std::scientific << std::setprecision(6);
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    out << names[i];
    for (double v : matrix[i]) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

}  // namespace pusnet
