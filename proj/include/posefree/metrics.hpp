#pragma once

#include <vector>

#include "posefree/autograd.hpp"
#include "posefree/image.hpp"

namespace posefree {

// 10 log10(1 / MSE), capped at 99 dB for identical images.
double psnr(const Image& a, const Image& b);
// Mean SSIM over the valid region of an 11x11 Gaussian window (sigma 1.5),
// averaged over channels; C1 = 0.01^2, C2 = 0.03^2.
double ssim(const Image& a, const Image& b);
double mse(const Image& a, const Image& b);

// Fixed, randomly initialized convolutional feature stack used as a
// perceptual proxy. The distance is the sum over layers of the mean squared
// feature difference.
class PerceptualExtractor {
 public:
  explicit PerceptualExtractor(std::uint64_t seed = 1234);

  // Feature maps of an [H*W, 3] image tensor, differentiable.
  std::vector<ad::Tensor> features(const ad::Tensor& pixels, int height, int width) const;
  // Differentiable distance between a rendered [H*W, 3] tensor and a fixed target.
  ad::Tensor distance(const ad::Tensor& pixels, const Image& target) const;
  double distance(const Image& a, const Image& b) const;

 private:
  std::vector<ad::Tensor> weights_;
  std::vector<ad::Tensor> biases_;
  std::vector<int> strides_;
};

const PerceptualExtractor& default_perceptual();
double perceptual(const Image& a, const Image& b);

}  // namespace posefree
