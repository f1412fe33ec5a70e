#include "posefree/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace posefree {

int AugmentationSchedule::views_in_generation(int generation) const {
  if (generation < 0) throw std::invalid_argument("generation must be >= 0");
  return k0 + generation * k_increment;
}

int AugmentationSchedule::total_after(int generation) const {
  if (replace) return views_in_generation(generation);
  int total = 0;
  for (int g = 0; g <= generation; ++g) total += views_in_generation(g);
  return total;
}

void AugmentationSchedule::validate() const {
  if (interval_steps < 1) throw std::invalid_argument("augmentation interval_steps must be >= 1");
  if (k0 < 1) throw std::invalid_argument("augmentation k0 must be >= 1");
  if (k_increment < 0) throw std::invalid_argument("augmentation k_increment must be >= 0");
  if (!(t_floor_fraction > 0.0 && t_floor_fraction <= 1.0))
    throw std::invalid_argument("augmentation t_floor_fraction must lie in (0, 1]");
  if (t_max < 1) throw std::invalid_argument("augmentation t_max must be >= 1");
}

int timestep_schedule(std::int64_t s_curr, std::int64_t s_total, int t_max, double floor_fraction) {
  if (s_total <= 0) throw std::invalid_argument("timestep_schedule: s_total must be positive");
  if (s_curr < 0 || s_curr > s_total) throw std::invalid_argument("timestep_schedule: s_curr outside [0, s_total]");
  // Integer arithmetic where possible so the schedule points are exact.
  const std::int64_t remaining = (s_total - s_curr) * t_max / s_total;
  const auto floor_t = static_cast<std::int64_t>(std::floor(floor_fraction * t_max + 1e-9));
  return static_cast<int>(std::max(remaining, floor_t));
}

double beta_schedule(std::int64_t s_curr, std::int64_t s_total, double beta_start, double beta_end) {
  if (s_total <= 0) throw std::invalid_argument("beta_schedule: s_total must be positive");
  if (s_curr < 0 || s_curr > s_total) throw std::invalid_argument("beta_schedule: s_curr outside [0, s_total]");
  return beta_start + (beta_end - beta_start) * (static_cast<double>(s_curr) / static_cast<double>(s_total));
}

int denoising_steps_for(int t_start) { return std::max(1, t_start / 50); }

void PseudoViewSet::append(std::vector<PseudoView> batch, bool replace) {
  if (replace) views.clear();
  for (auto& v : batch) views.push_back(std::move(v));
  ++generations;
}

std::vector<PseudoView> synthesize_pseudo_views(const ViewRenderer& model, const Image& ref, const Denoiser& den,
                                                const NoiseSchedule& sched, const AugmentationSchedule& aug,
                                                std::int64_t s_curr, std::int64_t s_total, int generation,
                                                double orbit_radius, Rng& rng) {
  aug.validate();
  const int k = aug.views_in_generation(generation);
  const int t = std::min(timestep_schedule(s_curr, s_total, aug.t_max, aug.t_floor_fraction), sched.t_max());
  const int steps = denoising_steps_for(t);
  std::vector<PseudoView> out;
  for (const OrbitPose& pose : sample_orbit_poses(k, orbit_radius, aug.theta_aug, rng)) {
    const Image render = model(pose);
    const Image noisy = add_noise(render, t, gaussian_image(render.height, render.width, rng), sched);
    out.push_back(PseudoView{denoise_to_image(noisy, t, ref, pose, den, sched, steps), pose, s_curr, t, generation});
  }
  return out;
}

void dump_pseudo_views(const std::filesystem::path& dir, const std::vector<PseudoView>& views) {
  if (views.empty()) return;
  const auto gen_dir = dir / ("gen_" + std::to_string(views.front().generation));
  std::filesystem::create_directories(gen_dir);
  nlohmann::json records = nlohmann::json::array();
  for (std::size_t i = 0; i < views.size(); ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "%03zu.png", i);
    write_png(gen_dir / name, views[i].image);
    records.push_back({{"image", name},
                       {"pose", views[i].pose},
                       {"created_at_step", views[i].created_at_step},
                       {"t_start", views[i].t_start_used},
                       {"generation", views[i].generation}});
  }
  const std::string text = records.dump(2) + "\n";
  write_file_atomic(gen_dir / "views.json", text);
}

}  // namespace posefree
