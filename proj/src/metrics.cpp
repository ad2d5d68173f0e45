#include "binec/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "binec/bitstream.hpp"
#include "binec/training.hpp"

namespace binec {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;

std::vector<double> to_double(const Image8& image) {
  return {image.data.begin(), image.data.end()};
}

void check_same(const Image8& a, const Image8& b) {
  if (a.width != b.width || a.height != b.height) {
    throw std::invalid_argument("image sizes differ: " + std::to_string(a.width) + "x" +
                                std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                std::to_string(b.height));
  }
}

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> taps{};
  double total = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    taps[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    total += taps[i];
  }
  for (double& t : taps) t /= total;
  return taps;
}

// Valid-mode separable Gaussian filter of one plane.
std::vector<double> blur(const std::vector<double>& plane, int h, int w) {
  static const auto taps = gaussian_taps();
  const int oh = h - kWindow + 1, ow = w - kWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += taps[k] * plane[static_cast<std::size_t>(y) * w + x + k];
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += taps[k] * rows[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace

double psnr(std::span<const double> a, std::span<const double> b, double peak) {
  if (a.size() != b.size() || a.empty()) {
    throw std::invalid_argument("psnr: inputs must be non-empty and of equal size");
  }
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    se += d * d;
  }
  if (se == 0.0) return kPsnrInfinity;
  return 10.0 * std::log10(peak * peak / (se / static_cast<double>(a.size())));
}

double psnr(const Image8& a, const Image8& b, double peak) {
  check_same(a, b);
  return psnr(to_double(a), to_double(b), peak);
}

double ssim(std::span<const double> a, std::span<const double> b, int channels, int height,
            int width, double range) {
  if (a.size() != b.size() || a.size() != static_cast<std::size_t>(channels) * height * width) {
    throw std::invalid_argument("ssim: inputs must both hold channels x height x width values");
  }
  if (height < kWindow || width < kWindow) {
    throw std::invalid_argument("ssim: image " + std::to_string(width) + "x" +
                                std::to_string(height) + " is smaller than the 11x11 window");
  }
  const double c1 = (kK1 * range) * (kK1 * range);
  const double c2 = (kK2 * range) * (kK2 * range);
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  double channel_total = 0.0;
  for (int c = 0; c < channels; ++c) {
    std::vector<double> pa(a.begin() + c * plane, a.begin() + (c + 1) * plane);
    std::vector<double> pb(b.begin() + c * plane, b.begin() + (c + 1) * plane);
    std::vector<double> aa(plane), bb(plane), ab(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto mu_a = blur(pa, height, width);
    const auto mu_b = blur(pb, height, width);
    const auto e_aa = blur(aa, height, width);
    const auto e_bb = blur(bb, height, width);
    const auto e_ab = blur(ab, height, width);
    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double var_a = e_aa[i] - mu_a[i] * mu_a[i];
      const double var_b = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      total += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
               ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (var_a + var_b + c2));
    }
    channel_total += total / static_cast<double>(mu_a.size());
  }
  return channel_total / channels;
}

double ssim(const Image8& a, const Image8& b) {
  check_same(a, b);
  return ssim(to_double(a), to_double(b), 3, a.height, a.width, 255.0);
}

void RdCurve::validate(std::size_t min_points) const {
  if (points.size() < min_points) {
    throw std::invalid_argument(metric + " curve has " + std::to_string(points.size()) +
                                " points, at least " + std::to_string(min_points) + " needed");
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!std::isfinite(points[i].bpp) || !std::isfinite(points[i].score)) {
      throw std::invalid_argument(metric + " curve has a non-finite point");
    }
    if (i > 0 && !(points[i].bpp > points[i - 1].bpp)) {
      throw std::invalid_argument(metric + " curve: bpp must be strictly increasing");
    }
  }
}

RdEvaluation evaluate_rd(const CodecModel& model, std::span<const Image8> images, int iterations,
                         const CodingOptions& options, bool keep_reconstructions) {
  if (images.empty()) throw std::invalid_argument("no images to evaluate");
  RdEvaluation eval;
  eval.ssim.metric = "ssim";
  eval.psnr.metric = "psnr";
  std::vector<double> ssim_sum(iterations, 0.0), psnr_sum(iterations, 0.0);
  if (keep_reconstructions) eval.reconstructions.assign(iterations, {});
  for (const Image8& image : images) {
    const Tensor x = normalize(image);
    const CompressedImage codes = compress_image(model, x, iterations, options);
    const std::vector<Tensor> stages = decompress_progressive(model, codes, iterations, options);
    for (int i = 0; i < iterations; ++i) {
      const Image8 decoded = denormalize(stages[i]);
      ssim_sum[i] += ssim(image, decoded);
      psnr_sum[i] += std::min(psnr(image, decoded), kPsnrCap);
      if (keep_reconstructions) eval.reconstructions[i].push_back(decoded);
    }
  }
  const double n = static_cast<double>(images.size());
  for (int i = 0; i < iterations; ++i) {
    const double bpp = static_cast<double>(kCodeBits) * (i + 1) / (kPatchSize * kPatchSize);
    eval.ssim.points.push_back({bpp, ssim_sum[i] / n});
    eval.psnr.points.push_back({bpp, psnr_sum[i] / n});
  }
  return eval;
}

double auc(const RdCurve& curve) {
  curve.validate(2);
  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto& p = curve.points[i - 1];
    const auto& q = curve.points[i];
    area += 0.5 * (p.score + q.score) * (q.bpp - p.bpp);
  }
  return area;
}

namespace {

struct QualityRange {
  double lo, hi;
};

QualityRange quality_range(const RdCurve& c) {
  auto [lo, hi] = std::minmax_element(c.points.begin(), c.points.end(),
                                      [](const RdPoint& a, const RdPoint& b) { return a.score < b.score; });
  return {lo->score, hi->score};
}

// Least-squares cubic log(rate) = p(t), t = (quality - centre) / scale.
Eigen::Vector4d fit_cubic(const RdCurve& c, double centre, double scale) {
  const int n = static_cast<int>(c.points.size());
  Eigen::MatrixXd a(n, 4);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    const double t = (c.points[i].score - centre) / scale;
    a(i, 0) = 1.0;
    a(i, 1) = t;
    a(i, 2) = t * t;
    a(i, 3) = t * t * t;
    y(i) = std::log(c.points[i].bpp);
  }
  return a.colPivHouseholderQr().solve(y);
}

double integrate(const Eigen::Vector4d& p, double lo, double hi) {
  auto primitive = [&](double t) {
    return p(0) * t + p(1) * t * t / 2.0 + p(2) * t * t * t / 3.0 + p(3) * t * t * t * t / 4.0;
  };
  return primitive(hi) - primitive(lo);
}

}  // namespace

double bd_log_rate_difference(const RdCurve& reference, const RdCurve& test) {
  reference.validate(4);
  test.validate(4);
  for (const auto* c : {&reference, &test}) {
    for (const auto& p : c->points) {
      if (!(p.bpp > 0.0)) throw std::invalid_argument("BD-rate needs positive rates");
    }
  }
  const QualityRange r = quality_range(reference);
  const QualityRange t = quality_range(test);
  const double lo = std::max(r.lo, t.lo);
  const double hi = std::min(r.hi, t.hi);
  if (!(hi > lo)) {
    throw std::invalid_argument("BD-rate: quality ranges do not overlap (reference [" +
                                std::to_string(r.lo) + ", " + std::to_string(r.hi) + "], test [" +
                                std::to_string(t.lo) + ", " + std::to_string(t.hi) + "])");
  }
  const double centre = 0.5 * (std::min(r.lo, t.lo) + std::max(r.hi, t.hi));
  const double scale = std::max(0.5 * (std::max(r.hi, t.hi) - std::min(r.lo, t.lo)), 1e-12);
  const double tlo = (lo - centre) / scale, thi = (hi - centre) / scale;
  const double ref_area = integrate(fit_cubic(reference, centre, scale), tlo, thi);
  const double test_area = integrate(fit_cubic(test, centre, scale), tlo, thi);
  return (test_area - ref_area) / (thi - tlo);
}

double bd_rate(const RdCurve& reference, const RdCurve& test) {
  return (std::exp(bd_log_rate_difference(reference, test)) - 1.0) * 100.0;
}

void write_curves_csv(const std::filesystem::path& path, std::span<const RdCurve> curves) {
  std::ostringstream out;
  out.precision(12);
  out << "metric,bpp,score\n";
  for (const RdCurve& c : curves) {
    for (const RdPoint& p : c.points) out << c.metric << ',' << p.bpp << ',' << p.score << '\n';
  }
  const std::string text = out.str();
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<RdCurve> read_curves_csv(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::string line;
  if (!std::getline(in, line) || line.rfind("metric,bpp,score", 0) != 0) {
    throw FormatError(FormatErrorCode::kInvalidHeader,
                      path.string() + ": expected a 'metric,bpp,score' header");
  }
  std::vector<RdCurve> curves;
  int number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string metric, bpp, score;
    if (!std::getline(fields, metric, ',') || !std::getline(fields, bpp, ',') ||
        !std::getline(fields, score)) {
      throw FormatError(FormatErrorCode::kInvalidValue,
                        path.string() + ":" + std::to_string(number) + ": malformed row");
    }
    RdPoint p;
    try {
      p = {std::stod(bpp), std::stod(score)};
    } catch (const std::exception&) {
      throw FormatError(FormatErrorCode::kInvalidValue,
                        path.string() + ":" + std::to_string(number) + ": non-numeric value");
    }
    auto it = std::find_if(curves.begin(), curves.end(),
                           [&](const RdCurve& c) { return c.metric == metric; });
    if (it == curves.end()) {
      curves.push_back({metric, {}});
      it = curves.end() - 1;
    }
    it->points.push_back(p);
  }
  return curves;
}

}  // namespace binec
