#pragma once

#include <filesystem>
#include <vector>

#include "posefree/diffusion.hpp"

namespace posefree {

struct ToyDenoiserConfig {
  int resolution = 32;
  int base_channels = 16;
};

// Small two-level U-net over [x_t, ref, pose maps, time maps]. The network
// predicts the clean image; predict_noise converts that estimate into the
// equivalent noise prediction.
class ToyDenoiser : public Denoiser {
 public:
  static constexpr int kInputChannels = 11;

  ToyDenoiser(ToyDenoiserConfig cfg, NoiseSchedule sched, Rng& rng);

  Image predict_noise(const Image& x_t, int t, const Image& ref, const OrbitPose& rel_pose) const override;
  // Differentiable clean-image estimate as [H*W, 3].
  ad::Tensor predict_clean(const Image& x_t, int t, const Image& ref, const OrbitPose& rel_pose) const;

  const ToyDenoiserConfig& config() const { return cfg_; }
  const NoiseSchedule& schedule() const { return sched_; }
  std::vector<ad::Tensor> parameters() const;

  void save(const std::filesystem::path& path) const;
  static ToyDenoiser load(const std::filesystem::path& path);

 private:
  ToyDenoiserConfig cfg_;
  NoiseSchedule sched_;
  std::vector<ad::Tensor> weights_;
  std::vector<ad::Tensor> biases_;
};

struct ToyTrainOptions {
  int steps = 3000;
  int batch = 8;
  double learning_rate = 2e-3;
  int bank_views = 64;
  double polar_range = 0.17453292519943295;  // pi / 18
  double orbit_radius = 2.0;
  std::uint64_t seed = 0;
};

// Fits the denoiser on ground-truth views of the given scenes, conditioned
// on each scene's reference view. Returns the final mean training loss.
double train_toy_denoiser(ToyDenoiser& den, const std::vector<PriorScene>& scenes, const ToyTrainOptions& opt);

}  // namespace posefree
