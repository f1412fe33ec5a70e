#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "posefree/trainer.hpp"

namespace posefree {

// Reference-frame gauge fix: frame 0 is assigned the pose p0 and every
// held-out pose is mapped through the same relative transform (azimuth
// offset removed, radius rescaled to p0's radius, polar kept).
std::vector<OrbitPose> align_to_reference(const EvalSidecar& sidecar, const OrbitPose& p0);
// p0 used by training: azimuth 0 on the training orbit, the reference polar.
OrbitPose default_reference_pose(const EvalSidecar& sidecar, double orbit_radius);

struct ObjectMetrics {
  std::string object_id;
  double psnr = 0.0;
  double ssim = 0.0;
  double perceptual = 0.0;
  std::vector<double> view_psnr;
};

struct EvalReport {
  std::string tag;  // full | no_weak | no_aug | posed | ...
  nlohmann::ordered_json config;
  std::vector<ObjectMetrics> objects;
  double psnr = 0.0;
  double ssim = 0.0;
  double perceptual = 0.0;
};
nlohmann::ordered_json report_to_json(const EvalReport& report);

// Renders the reconstruction at the held-out cameras. With align = false the
// raw sidecar poses are used.
ObjectMetrics evaluate_object(const Model& model, const TrainConfig& cfg, const UnposedVideo& video,
                              const EvalSidecar& sidecar, bool align = true);
double mean_holdout_psnr(const Model& model, const TrainConfig& cfg, const std::vector<UnposedVideo>& videos,
                         const std::vector<EvalSidecar>& sidecars);
EvalReport evaluate_dataset(const Model& model, const TrainConfig& cfg, const std::filesystem::path& root,
                            const std::string& tag);

// n views evenly spaced in azimuth on the equator, side by side.
Image turntable_strip(const TriPlane& tp, const Model& model, const TrainConfig& cfg, int n_views = 8);

// Priors for every manifest object: "oracle" reads each prior_scene.json,
// "toy" shares one ToyDenoiser loaded from toy_weights.
PriorProvider dataset_priors(const DatasetManifest& manifest, const std::string& kind,
                             const std::filesystem::path& toy_weights, double orbit_radius);

// Self-contained reconstruction dump: planes plus decoder weights.
void write_triplane_dump(const std::filesystem::path& path, const TriPlane& tp, const RadianceDecoder& dec);
std::pair<TriPlane, RadianceDecoder> read_triplane_dump(const std::filesystem::path& path);

struct AblationRun {
  EvalReport report;
  TrainState state;
};
// The three variants share the dataset, the seed and the step budget.
std::vector<std::string> ablation_tags();
TrainConfig ablation_config(const TrainConfig& base, const std::string& tag);
std::vector<AblationRun> run_ablation_suite(const std::filesystem::path& root, const TrainConfig& base,
                                            const PriorProvider& priors, const std::vector<std::string>& tags,
                                            const std::filesystem::path& out_dir = {});

}  // namespace posefree
