#pragma once

#include <string>
#include <utility>
#include <vector>

#include "posefree/perception.hpp"
#include "posefree/synthesizer.hpp"
#include "posefree/triplane.hpp"

namespace posefree {

struct ModelConfig {
  std::string preset = "desk";
  int frame_resolution = 64;
  std::vector<int> encoder_channels;
  AlignerConfig aligner;
  SynthesizerConfig synthesizer;
  int decoder_hidden = 64;
  double decoder_density_bias = 0.0;
  double extent = 1.0;
  NoiseMode noise_mode = NoiseMode::frozen;

  // "paper", "desk" or "tiny".
  static ModelConfig from_preset(const std::string& name);
  void validate() const;
};

struct Model {
  ModelConfig config;
  FrameEncoder encoder;
  LatentAligner aligner;
  StyleSynthesizer synthesizer;
  RadianceDecoder decoder;

  static Model create(const ModelConfig& cfg, Rng& rng);
  std::vector<ad::Tensor> parameters() const;
  // Every persistent tensor with a stable name, trainable ones first.
  std::vector<std::pair<std::string, ad::Tensor>> named_state() const;
};

struct Reconstruction {
  SceneLatent latent;
  TriPlane triplane;
};

// encode -> align -> synthesize; one forward pass, no optimization.
Reconstruction forward(const Model& model, const std::vector<Image>& frames, Rng* noise_rng = nullptr);

}  // namespace posefree
