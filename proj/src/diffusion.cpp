#include "posefree/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace posefree {

namespace {

void require_same_shape(const Image& a, const Image& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": image shapes differ (" + std::to_string(a.height) + "x" +
                                std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                                std::to_string(b.width) + ")");
}

}  // namespace

NoiseSchedule::NoiseSchedule(std::vector<double> alpha_bar) : alpha_bar_(std::move(alpha_bar)) {
  if (alpha_bar_.size() < 2) throw std::invalid_argument("NoiseSchedule: need at least two entries");
  if (alpha_bar_.front() != 1.0) throw std::invalid_argument("NoiseSchedule: alpha_bar[0] must be 1");
  for (std::size_t t = 1; t < alpha_bar_.size(); ++t)
    if (!(alpha_bar_[t] <= alpha_bar_[t - 1]) || !(alpha_bar_[t] > 0.0))
      throw std::invalid_argument("NoiseSchedule: alpha_bar must be positive and nonincreasing (t=" +
                                  std::to_string(t) + ")");
  if (!(alpha_bar_.back() < 0.01)) throw std::invalid_argument("NoiseSchedule: alpha_bar[t_max] must be < 0.01");
}

NoiseSchedule NoiseSchedule::cosine(int t_max, double offset, double max_beta) {
  if (t_max < 1) throw std::invalid_argument("NoiseSchedule: t_max must be >= 1");
  auto f = [&](int t) {
    const double c = std::cos((static_cast<double>(t) / t_max + offset) / (1.0 + offset) * std::numbers::pi / 2);
    return c * c;
  };
  std::vector<double> ab(static_cast<std::size_t>(t_max) + 1);
  ab[0] = 1.0;
  for (int t = 1; t <= t_max; ++t) {
    const double beta = std::min(1.0 - f(t) / f(t - 1), max_beta);
    ab[t] = ab[t - 1] * (1.0 - beta);
  }
  return NoiseSchedule(std::move(ab));
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > t_max())
    throw std::invalid_argument("timestep " + std::to_string(t) + " outside [0, " + std::to_string(t_max()) + "]");
  return alpha_bar_[static_cast<std::size_t>(t)];
}

SdsWeighting parse_sds_weighting(const std::string& name) {
  if (name == "one_minus_alpha_bar") return SdsWeighting::one_minus_alpha_bar;
  if (name == "unit") return SdsWeighting::unit;
  throw std::invalid_argument("unknown SDS weighting '" + name + "' (expected one_minus_alpha_bar or unit)");
}

std::string to_string(SdsWeighting w) { return w == SdsWeighting::unit ? "unit" : "one_minus_alpha_bar"; }

double sds_weight(SdsWeighting weighting, const NoiseSchedule& sched, int t) {
  return weighting == SdsWeighting::unit ? 1.0 : 1.0 - sched.alpha_bar(t);
}

OracleDenoiser::OracleDenoiser(PriorScene prior, NoiseSchedule sched, double orbit_radius)
    : prior_(std::move(prior)), sched_(std::move(sched)), orbit_radius_(orbit_radius) {
  if (!(orbit_radius > 0)) throw std::invalid_argument("OracleDenoiser: orbit radius must be positive");
}

OrbitPose OracleDenoiser::absolute_pose(const OrbitPose& rel) const {
  return make_orbit_pose(rel.radius * prior_.reference_pose.radius / orbit_radius_,
                         rel.azimuth + prior_.reference_pose.azimuth, rel.polar);
}

Image OracleDenoiser::ground_truth(const OrbitPose& rel_pose, int resolution) const {
  const auto key = std::make_tuple(rel_pose.radius, rel_pose.azimuth, rel_pose.polar, resolution);
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  RenderConfig cfg;
  cfg.samples_per_ray = prior_.samples_per_ray;
  Image img = render_ground_truth(prior_.scene, absolute_pose(rel_pose), resolution, cfg);
  std::lock_guard lock(mutex_);
  if (cache_.size() > 512) cache_.clear();
  cache_.emplace(key, img);
  return img;
}

Image OracleDenoiser::predict_noise(const Image& x_t, int t, const Image&, const OrbitPose& rel_pose) const {
  if (x_t.height != x_t.width) throw std::invalid_argument("OracleDenoiser: expects square images");
  const Image gt = ground_truth(rel_pose, x_t.height);
  const double ab = sched_.alpha_bar(t);
  if (t == 0) return Image(x_t.height, x_t.width, 0.0);
  const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
  Image eps(x_t.height, x_t.width);
  for (std::size_t i = 0; i < eps.size(); ++i) eps.pixels[i] = (x_t.pixels[i] - sa * gt.pixels[i]) / sn;
  return eps;
}

Image add_noise(const Image& x0, int t, const Image& eps, const NoiseSchedule& sched) {
  require_same_shape(x0, eps, "add_noise");
  const double ab = sched.alpha_bar(t);
  if (ab == 1.0) return x0;
  const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
  Image out(x0.height, x0.width);
  for (std::size_t i = 0; i < out.size(); ++i) out.pixels[i] = sa * x0.pixels[i] + sn * eps.pixels[i];
  return out;
}

Image sds_gradient(const Image& rendered, const Image& ref, const OrbitPose& rel_pose, int t, const Denoiser& den,
                   const NoiseSchedule& sched, SdsWeighting weighting, const Image& eps) {
  require_same_shape(rendered, eps, "sds_gradient");
  const double w = sds_weight(weighting, sched, t);
  Image grad(rendered.height, rendered.width, 0.0);
  if (w == 0.0) return grad;
  const Image eps_hat = den.predict_noise(add_noise(rendered, t, eps, sched), t, ref, rel_pose);
  require_same_shape(rendered, eps_hat, "sds_gradient");
  for (std::size_t i = 0; i < grad.size(); ++i) grad.pixels[i] = w * (eps_hat.pixels[i] - eps.pixels[i]);
  return grad;
}

Image sds_gradient(const Image& rendered, const Image& ref, const OrbitPose& rel_pose, int t, const Denoiser& den,
                   const NoiseSchedule& sched, SdsWeighting weighting, Rng& rng) {
  return sds_gradient(rendered, ref, rel_pose, t, den, sched, weighting,
                      gaussian_image(rendered.height, rendered.width, rng));
}

Image denoise_to_image(const Image& x_t, int t_start, const Image& ref, const OrbitPose& rel_pose,
                       const Denoiser& den, const NoiseSchedule& sched, int steps) {
  if (t_start == 0) return x_t;
  if (t_start < 0 || t_start > sched.t_max()) throw std::invalid_argument("denoise_to_image: t_start out of range");
  if (steps < 1 || steps > t_start)
    throw std::invalid_argument("denoise_to_image: steps must lie in [1, t_start], got " + std::to_string(steps));
  Image x = x_t;
  for (int j = 0; j < steps; ++j) {
    const int tau = static_cast<int>(std::llround(static_cast<double>(t_start) * (steps - j) / steps));
    const int next = static_cast<int>(std::llround(static_cast<double>(t_start) * (steps - j - 1) / steps));
    const double ab = sched.alpha_bar(tau);
    const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
    const Image eps_hat = den.predict_noise(x, tau, ref, rel_pose);
    Image x0(x.height, x.width);
    for (std::size_t i = 0; i < x0.size(); ++i)
      x0.pixels[i] = std::clamp((x.pixels[i] - sn * eps_hat.pixels[i]) / sa, 0.0, 1.0);
    if (next == 0) {
      x = std::move(x0);
      break;
    }
    // Noise direction consistent with the clipped estimate.
    const double ab_next = sched.alpha_bar(next);
    const double sa_next = std::sqrt(ab_next), sn_next = std::sqrt(1.0 - ab_next);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double e = (x.pixels[i] - sa * x0.pixels[i]) / sn;
      x.pixels[i] = sa_next * x0.pixels[i] + sn_next * e;
    }
  }
  return clamp01(std::move(x));
}

Image gaussian_image(int height, int width, Rng& rng) {
  Image img(height, width);
  img.pixels = rng.normal_vector(img.size());
  return img;
}

}  // namespace posefree
