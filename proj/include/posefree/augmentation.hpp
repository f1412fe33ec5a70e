#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "posefree/diffusion.hpp"
#include "posefree/geometry.hpp"
#include "posefree/image.hpp"
#include "posefree/rng.hpp"

namespace posefree {

struct AugmentationSchedule {
  int interval_steps = 6000;
  int k0 = 6;
  int k_increment = 5;
  double t_floor_fraction = 0.2;
  int t_max = 1000;
  double theta_aug = 0.0;
  // Append-only by default; replace discards older generations.
  bool replace = false;
  // Number of views in generation g: k0 + g * k_increment.
  int views_in_generation(int generation) const;
  // Total views after generations 0..g have been appended.
  int total_after(int generation) const;
  void validate() const;
};

// floor(max(1 - s_curr / s_total, floor_fraction) * t_max)
int timestep_schedule(std::int64_t s_curr, std::int64_t s_total, int t_max, double floor_fraction = 0.2);
// beta_start + (beta_end - beta_start) * s_curr / s_total
double beta_schedule(std::int64_t s_curr, std::int64_t s_total, double beta_start = 1.0, double beta_end = 25000.0);
// Reverse-process stride count for a start timestep: max(1, t / 50).
int denoising_steps_for(int t_start);

struct PseudoView {
  Image image;
  OrbitPose pose;  // relative to the reference frame
  std::int64_t created_at_step = 0;
  int t_start_used = 0;
  int generation = 0;
};

struct PseudoViewSet {
  std::vector<PseudoView> views;
  int generations = 0;

  void append(std::vector<PseudoView> batch, bool replace);
  std::size_t size() const { return views.size(); }
};

// Renders the current model at a relative pose.
using ViewRenderer = std::function<Image(const OrbitPose& pose)>;

// Renders k_g views on the equator (theta_aug), noises each to the scheduled
// timestep and denoises it with the prior conditioned on the reference frame.
std::vector<PseudoView> synthesize_pseudo_views(const ViewRenderer& model, const Image& ref, const Denoiser& den,
                                                const NoiseSchedule& sched, const AugmentationSchedule& aug,
                                                std::int64_t s_curr, std::int64_t s_total, int generation,
                                                double orbit_radius, Rng& rng);

// PNG + pose record per view: <dir>/gen_G/NNN.png and <dir>/gen_G/views.json.
void dump_pseudo_views(const std::filesystem::path& dir, const std::vector<PseudoView>& views);

}  // namespace posefree
