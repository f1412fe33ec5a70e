#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "posefree/augmentation.hpp"
#include "posefree/diffusion.hpp"
#include "posefree/metrics.hpp"
#include "posefree/model.hpp"
#include "posefree/synthetic_data.hpp"

namespace posefree {

struct TrainConfig {
  std::string model_preset = "desk";
  double decoder_density_bias = 0.0;
  double learning_rate = 1e-4;
  double adam_beta2 = 0.999;
  std::int64_t warmup_steps = 1000;
  std::int64_t total_steps = 20000;
  int batch_objects = 4;
  int frames_per_object = 8;
  int sds_views = 4;
  double sds_theta = 0.17453292519943295;  // pi / 18
  int sds_t_min = 20;
  SdsWeighting sds_weighting = SdsWeighting::one_minus_alpha_bar;
  double lambda_perceptual = 1.0;
  double beta_start = 1.0;
  double beta_end = 25000.0;
  AugmentationSchedule augmentation{2000, 6, 5, 0.2, 1000, 0.0, false};
  // Generation events allowed in total; negative means unlimited.
  int max_generations = -1;
  // Pseudo-views rendered per object and step (a random subset of the set).
  int pseudo_views_per_step = 4;
  // Ablation switches: drop the SDS term; keep only generation 0.
  bool use_sds = true;
  bool use_augmentation = true;
  std::string prior = "oracle";
  int render_resolution = 64;
  int samples_per_ray = 64;
  double orbit_radius = 2.0;
  // Known-pose training: target views per object and step.
  int posed_views_per_step = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

// Adam with bias correction; moments are stored per parameter tensor.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  void step(const std::vector<ad::Tensor>& params, double lr);
};

// Linear warmup from 0, then cosine annealing to 0 at total_steps.
double learning_rate_at(std::int64_t step, const TrainConfig& cfg);

struct MetricRecord {
  std::int64_t step = 0;
  double loss_mse = 0.0;
  double loss_perc = 0.0;
  double sds_grad_norm = 0.0;
  double beta = 0.0;
  double lr = 0.0;
  int pseudo_views = 0;
  std::optional<double> psnr_holdout;
};
std::string metric_json_line(const MetricRecord& r);

struct TrainState {
  TrainConfig config;
  Model model;
  AdamState optimizer;
  std::int64_t step = 0;
  std::vector<PseudoViewSet> pseudo;  // one per object, in dataset order
  Rng rng;
  std::vector<MetricRecord> history;
};

TrainState init_train_state(const TrainConfig& cfg, std::size_t n_objects);

// The prior for dataset object i.
using PriorProvider = std::function<std::shared_ptr<const Denoiser>(std::size_t object_index)>;

struct TrainHooks {
  // Append-only JSON-lines metrics; empty disables.
  std::filesystem::path metrics_path;
  std::filesystem::path checkpoint_path;
  std::int64_t checkpoint_every = 0;
  // Pseudo-view dumps per generation; empty disables.
  std::filesystem::path pseudo_dump_dir;
  // Called at each generation event before new views are synthesized, and
  // once more after the final step with generation = -1.
  std::function<void(const TrainState& state, int generation)> on_generation;
  // Optional held-out PSNR for the metrics line (known-pose runs only).
  std::function<std::optional<double>(const TrainState& state)> holdout_psnr;
};

// Loss of one object: mean MSE + lambda * mean perceptual over pseudo-view
// renders, plus (1/beta) times the mean SDS surrogate sum(render * g) over
// the SDS renders. Only the SDS gradient is meaningful; `value` excludes it.
struct ReconLoss {
  ad::Tensor total;
  double value = 0.0;
  double mse = 0.0;
  double perceptual = 0.0;
  double sds_grad_norm = 0.0;
};
ReconLoss recon_loss(const std::vector<ad::Tensor>& renders, const std::vector<Image>& pseudo,
                     const std::vector<ad::Tensor>& sds_renders, const std::vector<Image>& sds_grads, double lambda,
                     double beta, int height, int width);

// Trains until state.step == until_step (or the configured total).
void train_pose_free(TrainState& state, const std::vector<UnposedVideo>& data, const PriorProvider& priors,
                     const TrainHooks& hooks = {}, std::optional<std::int64_t> until_step = std::nullopt);
void train_posed(TrainState& state, const std::vector<PosedVideo>& data, const TrainHooks& hooks = {},
                 std::optional<std::int64_t> until_step = std::nullopt);

// Ground-truth pose mapped into the reference-frame gauge: azimuth relative
// to frame 0, radius rescaled to the training orbit radius.
OrbitPose relative_to_reference(const OrbitPose& pose, const OrbitPose& reference, double orbit_radius);

Reconstruction reconstruct(const UnposedVideo& video, const Model& model);
RenderConfig eval_render_config(const TrainConfig& cfg);
Image render_view(const TriPlane& tp, const Model& model, const OrbitPose& pose, const TrainConfig& cfg);

}  // namespace posefree
