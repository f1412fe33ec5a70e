#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <tuple>
#include <vector>

#include "posefree/geometry.hpp"
#include "posefree/image.hpp"
#include "posefree/rng.hpp"
#include "posefree/synthetic_data.hpp"
#include "posefree/triplane.hpp"

namespace posefree {

// Cumulative signal coefficients alpha_bar[t], t = 0..t_max.
class NoiseSchedule {
 public:
  // Validates alpha_bar[0] = 1, monotone nonincreasing, alpha_bar[t_max] < 0.01.
  explicit NoiseSchedule(std::vector<double> alpha_bar);
  // Cosine schedule with per-step betas clipped at max_beta.
  static NoiseSchedule cosine(int t_max = 1000, double offset = 0.008, double max_beta = 0.999);

  int t_max() const { return static_cast<int>(alpha_bar_.size()) - 1; }
  double alpha_bar(int t) const;
  const std::vector<double>& table() const { return alpha_bar_; }

 private:
  std::vector<double> alpha_bar_;
};

enum class SdsWeighting { one_minus_alpha_bar, unit };
SdsWeighting parse_sds_weighting(const std::string& name);
std::string to_string(SdsWeighting w);
double sds_weight(SdsWeighting weighting, const NoiseSchedule& sched, int t);

// Conditional noise predictor. x_t is an unclamped image; rel_pose is the
// target pose relative to the reference frame, which sits at azimuth 0.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Image predict_noise(const Image& x_t, int t, const Image& ref, const OrbitPose& rel_pose) const = 0;
};

// Predicts the noise that makes the one-step clean estimate equal the true
// view: eps_hat = (x_t - sqrt(ab) x_gt) / sqrt(1 - ab).
class OracleDenoiser : public Denoiser {
 public:
  // orbit_radius is the radius of the reference pose in the model frame.
  OracleDenoiser(PriorScene prior, NoiseSchedule sched, double orbit_radius = 2.0);

  Image predict_noise(const Image& x_t, int t, const Image& ref, const OrbitPose& rel_pose) const override;
  // Ground-truth view at a pose given relative to the reference frame.
  Image ground_truth(const OrbitPose& rel_pose, int resolution) const;
  OrbitPose absolute_pose(const OrbitPose& rel_pose) const;

 private:
  PriorScene prior_;
  NoiseSchedule sched_;
  double orbit_radius_;
  mutable std::mutex mutex_;
  mutable std::map<std::tuple<double, double, double, int>, Image> cache_;
};

// sqrt(ab_t) x0 + sqrt(1 - ab_t) eps
Image add_noise(const Image& x0, int t, const Image& eps, const NoiseSchedule& sched);

// w(t) (eps_hat - eps) with x_t = add_noise(rendered, t, eps). The result is
// the gradient injected at the rendered image.
Image sds_gradient(const Image& rendered, const Image& ref, const OrbitPose& rel_pose, int t, const Denoiser& den,
                   const NoiseSchedule& sched, SdsWeighting weighting, const Image& eps);
Image sds_gradient(const Image& rendered, const Image& ref, const OrbitPose& rel_pose, int t, const Denoiser& den,
                   const NoiseSchedule& sched, SdsWeighting weighting, Rng& rng);

// Deterministic reverse process from t_start to 0 in `steps` strides. Each
// stride clips the clean estimate to [0,1] and re-projects it to the next
// timestep. t_start = 0 returns x_t unchanged.
Image denoise_to_image(const Image& x_t, int t_start, const Image& ref, const OrbitPose& rel_pose,
                       const Denoiser& den, const NoiseSchedule& sched, int steps);

Image gaussian_image(int height, int width, Rng& rng);

}  // namespace posefree
