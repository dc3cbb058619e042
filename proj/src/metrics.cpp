// SPDX-License-Identifier: Apache-2.0
#include "pusnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <iomanip>

#include "pusnet/datapipe.hpp"
#include "pusnet/errors.hpp"

namespace pusnet {

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kPeak = 255.0;

Eigen::VectorXd gaussian_window(int size) {
  Eigen::VectorXd g(size);
  const double center = (size - 1) / 2.0;
  for (int i = 0; i < size; ++i) g[i] = std::exp(-(i - center) * (i - center) / (2.0 * kSsimSigma * kSsimSigma));
  return g / g.sum();
}

// Separable "valid" filtering: output is (h - size + 1) x (w - size + 1).
RowMatrix<double> filter_valid(const RowMatrix<double>& img, const Eigen::VectorXd& g) {
  const Index size = g.size();
  const Index h = img.rows(), w = img.cols();
  RowMatrix<double> horizontal = RowMatrix<double>::Zero(h, w - size + 1);
  for (Index i = 0; i < size; ++i) horizontal += g[i] * img.middleCols(i, w - size + 1);
  RowMatrix<double> out = RowMatrix<double>::Zero(h - size + 1, w - size + 1);
  for (Index i = 0; i < size; ++i) out += g[i] * horizontal.middleRows(i, h - size + 1);
  return out;
}

RowMatrix<double> to_8bit(const ImagePlane& image, bool quantized) {
  if (!quantized) return (image.values.cast<double>() * kPeak).eval();
  // Exact integer levels: quantize() stores level / 255 in float.
  return (quantize(image).values.cast<double>() * kPeak).array().round().matrix().eval();
}

}  // namespace

double psnr_from_rmse(double rmse) {
  if (rmse <= 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(kPeak / rmse);
}

double ssim_plane(const RowMatrix<double>& a, const RowMatrix<double>& b, Index height, Index width) {
  int size = static_cast<int>(std::min<Index>({kSsimWindow, height, width}));
  if (size % 2 == 0) --size;
  const Eigen::VectorXd g = gaussian_window(size);
  const RowMatrix<double> x = a.reshaped<Eigen::RowMajor>(height, width);
  const RowMatrix<double> y = b.reshaped<Eigen::RowMajor>(height, width);

  const double c1 = (0.01 * kPeak) * (0.01 * kPeak);
  const double c2 = (0.03 * kPeak) * (0.03 * kPeak);
  const RowMatrix<double> mu_x = filter_valid(x, g);
  const RowMatrix<double> mu_y = filter_valid(y, g);
  const RowMatrix<double> xx = filter_valid(x.cwiseProduct(x), g);
  const RowMatrix<double> yy = filter_valid(y.cwiseProduct(y), g);
  const RowMatrix<double> xy = filter_valid(x.cwiseProduct(y), g);

  const auto mx = mu_x.array(), my = mu_y.array();
  const auto var_x = xx.array() - mx * mx;
  const auto var_y = yy.array() - my * my;
  const auto cov = xy.array() - mx * my;
  const auto num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
  const auto den = (mx * mx + my * my + c1) * (var_x + var_y + c2);
  return (num / den).mean();
}

QualityReport evaluate_pair(const ImagePlane& reference, const ImagePlane& test, EvalOptions options) {
  if (!reference.same_shape(test)) throw ValidationError("evaluate_pair: image shapes differ");
  if (reference.values.size() == 0) throw ValidationError("evaluate_pair: empty images");
  const RowMatrix<double> ref = to_8bit(reference, options.quantize_reference);
  const RowMatrix<double> tst = to_8bit(test, options.quantize_test);
  const auto diff = (ref - tst).array();

  QualityReport report;
  report.apd = diff.abs().mean();
  report.rmse = std::sqrt(diff.square().mean());
  report.psnr = psnr_from_rmse(report.rmse);
  double ssim_sum = 0.0;
  for (Index c = 0; c < ref.rows(); ++c) {
    ssim_sum += ssim_plane(ref.row(c), tst.row(c), reference.height, reference.width);
  }
  report.ssim = ssim_sum / static_cast<double>(ref.rows());
  return report;
}

QualityReport mean_report(std::span<const QualityReport> reports) {
  if (reports.empty()) throw ValidationError("mean_report: no reports");
  QualityReport mean{0.0, 0.0, 0.0, 0.0};
  for (const auto& r : reports) {
    mean.psnr += r.psnr;
    mean.ssim += r.ssim;
    mean.apd += r.apd;
    mean.rmse += r.rmse;
  }
  const double n = static_cast<double>(reports.size());
  mean.psnr /= n;
  mean.ssim /= n;
  mean.apd /= n;
  mean.rmse /= n;
  return mean;
}

std::string csv_header() { return "id,psnr,ssim,apd,rmse"; }

std::string csv_row(const std::string& id, const QualityReport& r) {
  std::ostringstream out;
  out << id << ',';
  if (std::isinf(r.psnr)) {
    out << "inf";
  } else {
    out << std::fixed << std::setprecision(4) << r.psnr;
  }
  out << std::fixed << ',' << std::setprecision(6) << r.ssim << ',' << std::setprecision(4) << r.apd << ','
      << r.rmse;
  return out.str();
}

}  // namespace pusnet
