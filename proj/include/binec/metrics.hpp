#pragma once

#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "binec/image.hpp"
#include "binec/models.hpp"

namespace binec {

/// psnr() of identical inputs.
inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();
/// Value written in place of +inf in CSV files and averages.
inline constexpr double kPsnrCap = 100.0;

/// 10 log10(peak^2 / MSE); +inf when the inputs are equal.
double psnr(const Image8& a, const Image8& b, double peak = 255.0);
double psnr(std::span<const double> a, std::span<const double> b, double peak);

/// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5), averaged
/// spatially per channel and then across channels. K1 = 0.01, K2 = 0.03.
double ssim(const Image8& a, const Image8& b);
/// Same for planar [channels][height][width] data with dynamic range `range`.
double ssim(std::span<const double> a, std::span<const double> b, int channels, int height,
            int width, double range);

struct RdPoint {
  double bpp = 0.0;
  double score = 0.0;
};

struct RdCurve {
  std::string metric;  // "ssim" or "psnr"
  std::vector<RdPoint> points;

  /// Throws std::invalid_argument unless bpp is strictly increasing and at
  /// least `min_points` points are present.
  void validate(std::size_t min_points) const;
};

struct RdEvaluation {
  RdCurve ssim;
  RdCurve psnr;
  /// reconstructions[i][k]: image k after i+1 iterations.
  std::vector<std::vector<Image8>> reconstructions;
};

/// Codes each image once with `iterations` stages and scores the progressive
/// reconstructions; point i sits at 0.125 * (i + 1) bpp and averages the
/// score over all images (PSNR capped at kPsnrCap).
RdEvaluation evaluate_rd(const CodecModel& model, std::span<const Image8> images, int iterations,
                         const CodingOptions& options = {}, bool keep_reconstructions = false);

/// Trapezoidal area under the curve over its bpp span.
double auc(const RdCurve& curve);

/// Mean natural-log rate difference (test - reference) over the common
/// quality interval, each curve fitted with a least-squares cubic of log
/// rate against quality.
double bd_log_rate_difference(const RdCurve& reference, const RdCurve& test);
/// Bjontegaard rate difference in percent; negative when `test` needs fewer
/// bits for the same quality.
double bd_rate(const RdCurve& reference, const RdCurve& test);

/// "metric,bpp,score" rows.
void write_curves_csv(const std::filesystem::path& path, std::span<const RdCurve> curves);
/// Every curve in a CSV written by write_curves_csv, in order of appearance.
std::vector<RdCurve> read_curves_csv(const std::filesystem::path& path);

}  // namespace binec
