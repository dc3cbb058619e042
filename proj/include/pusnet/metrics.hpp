// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <limits>
#include <span>
#include <string>

#include "pusnet/planes.hpp"

namespace pusnet {

/// Quality of a test image against a reference. apd and rmse are in 8-bit
/// units; psnr is +infinity when the images agree exactly.
struct QualityReport {
  double psnr = std::numeric_limits<double>::infinity();
  double ssim = 1.0;
  double apd = 0.0;
  double rmse = 0.0;
};

struct EvalOptions {
  bool quantize_reference = true;
  bool quantize_test = true;
};

/// Both images are quantized to 8 bits first (unless disabled), then
/// APD, RMSE, PSNR (peak 255) and SSIM (11x11 Gaussian window, sigma 1.5,
/// K1 = 0.01, K2 = 0.03, averaged over channels) are measured.
QualityReport evaluate_pair(const ImagePlane& reference, const ImagePlane& test, EvalOptions options = {});

double psnr_from_rmse(double rmse);

/// Mean SSIM of two single-channel planes given in 8-bit units. Images
/// smaller than the window use the largest odd window that fits.
double ssim_plane(const RowMatrix<double>& a, const RowMatrix<double>& b, Index height, Index width);

/// Componentwise mean of a set of reports.
QualityReport mean_report(std::span<const QualityReport> reports);

std::string csv_header();
std::string csv_row(const std::string& id, const QualityReport& report);

}  // namespace pusnet
