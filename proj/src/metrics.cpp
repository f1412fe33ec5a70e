#include "posefree/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "posefree/ops.hpp"
#include "posefree/rng.hpp"

namespace posefree {

namespace {

void require_same_shape(const Image& a, const Image& b, const char* op) {
  if (!a.same_shape(b) || a.size() != b.size())
    throw std::invalid_argument(std::string(op) + ": image shapes differ");
}

// Separable Gaussian filter over the valid region of one channel.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int oh = h - n + 1, ow = w - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * src[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

}  // namespace

double mse(const Image& a, const Image& b) {
  require_same_shape(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a.pixels[i] - b.pixels[i]) * (a.pixels[i] - b.pixels[i]);
  return s / static_cast<double>(a.size());
}

double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / m));
}

double ssim(const Image& a, const Image& b) {
  require_same_shape(a, b, "ssim");
  int n = std::min({11, a.height, a.width});
  if (n % 2 == 0) --n;
  const double sigma = 1.5;
  std::vector<double> k(static_cast<std::size_t>(n));
  double ksum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = i - (n - 1) / 2.0;
    k[i] = std::exp(-d * d / (2 * sigma * sigma));
    ksum += k[i];
  }
  for (auto& v : k) v /= ksum;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const int h = a.height, w = a.width;
  double total = 0.0;
  for (int ch = 0; ch < 3; ++ch) {
    std::vector<double> x(static_cast<std::size_t>(h) * w), y(x.size()), xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = a.pixels[i * 3 + ch];
      y[i] = b.pixels[i * 3 + ch];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, h, w, k), my = filter_valid(y, h, w, k);
    const auto sxx = filter_valid(xx, h, w, k), syy = filter_valid(yy, h, w, k), sxy = filter_valid(xy, h, w, k);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
      acc += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / 3.0;
}

PerceptualExtractor::PerceptualExtractor(std::uint64_t seed) {
  Rng rng(seed);
  const int channels[4] = {3, 8, 16, 16};
  const int strides[3] = {1, 2, 2};
  for (int l = 0; l < 3; ++l) {
    const int in = channels[l], out = channels[l + 1];
    weights_.push_back(ad::Tensor::from_data(
        rng.normal_vector(static_cast<std::size_t>(out) * in * 9, std::sqrt(2.0 / (9.0 * in))), {out, in, 3, 3}));
    biases_.push_back(ad::Tensor::zeros({out}));
    strides_.push_back(strides[l]);
  }
}

std::vector<ad::Tensor> PerceptualExtractor::features(const ad::Tensor& pixels, int height, int width) const {
  ad::Tensor x = ad::add_scalar(ad::scale(ad::hwc_to_chw(pixels, height, width), 2.0), -1.0);
  std::vector<ad::Tensor> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    x = ad::leaky_relu(ad::conv2d(x, weights_[l], biases_[l], strides_[l], 1), 0.2);
    out.push_back(x);
  }
  return out;
}

ad::Tensor PerceptualExtractor::distance(const ad::Tensor& pixels, const Image& target) const {
  if (pixels.rank() != 2 || pixels.dim(0) != static_cast<std::int64_t>(target.height) * target.width ||
      pixels.dim(1) != 3)
    throw std::invalid_argument("perceptual: image shapes differ");
  std::vector<ad::Tensor> target_features;
  {
    ad::NoGradGuard guard;
    target_features = features(target.to_tensor(), target.height, target.width);
  }
  const auto fa = features(pixels, target.height, target.width);
  std::vector<ad::Tensor> terms;
  for (std::size_t l = 0; l < fa.size(); ++l) terms.push_back(ad::mse(fa[l], target_features[l]));
  return ad::weighted_sum(terms, std::vector<double>(terms.size(), 1.0));
}

double PerceptualExtractor::distance(const Image& a, const Image& b) const {
  require_same_shape(a, b, "perceptual");
  ad::NoGradGuard guard;
  return distance(a.to_tensor(), b).item();
}

const PerceptualExtractor& default_perceptual() {
  static const PerceptualExtractor extractor;
  return extractor;
}

double perceptual(const Image& a, const Image& b) { return default_perceptual().distance(a, b); }

}  // namespace posefree
