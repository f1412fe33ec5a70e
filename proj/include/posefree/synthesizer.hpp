#pragma once

#include <string>
#include <vector>

#include "posefree/autograd.hpp"
#include "posefree/perception.hpp"
#include "posefree/rng.hpp"
#include "posefree/triplane.hpp"

namespace posefree {

// Per-channel instance normalization of x [C,H,W] followed by scale y_s [C]
// and bias y_b [C]; sigma = sqrt(var + eps).
ad::Tensor adain(const ad::Tensor& x, const ad::Tensor& y_s, const ad::Tensor& y_b, double eps = 1e-8);

struct SynthesizerConfig {
  int latent_dim = 192;   // |F|
  int const_channels = 64;
  // Output channels per level; level 0 runs at 4x4 and each later level
  // doubles the resolution. The last entry must be divisible by 3.
  std::vector<int> level_channels{64, 48, 32, 48};

  int plane_resolution() const { return 4 << (level_channels.size() - 1); }
  int plane_channels() const { return level_channels.back() / 3; }
};

enum class NoiseMode { fresh, frozen, off };
NoiseMode parse_noise_mode(const std::string& name);
std::string to_string(NoiseMode mode);

struct SynthesisLevel {
  ad::Tensor conv_w, conv_b;      // [C, C_in, 3, 3], [C]
  ad::Tensor noise_scale;         // B_i [C]
  ad::Tensor frozen_noise;        // [H, W], drawn once at creation, not trained
  ad::Tensor affine_w, affine_b;  // A_i: [|F|, 2C], [2C] -> (y_s, y_b)
  int resolution = 4;
};

struct StyleSynthesizer {
  SynthesizerConfig config;
  ad::Tensor const_input;  // [c0, 4, 4]
  std::vector<SynthesisLevel> levels;

  static StyleSynthesizer create(const SynthesizerConfig& cfg, Rng& rng);
  // Trainable tensors (frozen noise maps excluded).
  std::vector<ad::Tensor> parameters() const;
  // Everything that must persist, including frozen noise maps.
  std::vector<ad::Tensor> state_tensors() const;
};

// Progressive upsample -> conv -> noise -> leaky ReLU -> AdaIN(A_i(F)). The
// final map [3*d_T, H_T, W_T] is split into the XY, XZ and YZ planes. Fresh
// noise needs an rng.
TriPlane synthesize_triplane(const SceneLatent& latent, const StyleSynthesizer& syn, NoiseMode mode,
                             Rng* rng = nullptr, double extent = 1.0);

}  // namespace posefree
