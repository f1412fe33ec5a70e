#pragma once

#include <vector>

#include "posefree/autograd.hpp"
#include "posefree/image.hpp"
#include "posefree/rng.hpp"

namespace posefree {

// Strided 3x3 convolution stack image [3,H,W] -> latent [d, H/f, W/f] with
// f = 2^stages. Leaky-ReLU between stages, linear output.
struct FrameEncoder {
  std::vector<ad::Tensor> weights;
  std::vector<ad::Tensor> biases;
  int latent_channels = 4;

  // channels[0] must be 3; channels.back() is the latent depth.
  static FrameEncoder create(const std::vector<int>& channels, Rng& rng);
  int downsample() const { return 1 << weights.size(); }
  // Flattened latent size for a square frame of the given resolution.
  int token_dim(int resolution) const;
  std::vector<ad::Tensor> parameters() const;
};

struct FrameTokenSequence {
  ad::Tensor tokens;            // [N, d']
  std::vector<int> source_ids;  // frame index of each row
};

FrameTokenSequence encode_frames(const std::vector<Image>& frames, const FrameEncoder& enc);

struct AlignerConfig {
  int token_dim = 64;    // d'
  int model_width = 64;  // equal to token_dim means no input projection
  int layers = 2;
  int heads = 4;
  int feed_forward = 128;
};

struct TransformerBlock {
  ad::Tensor ln1_gain, ln1_bias;
  ad::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  ad::Tensor ln2_gain, ln2_bias;
  ad::Tensor ff1_w, ff1_b, ff2_w, ff2_b;
};

// Pre-norm transformer encoder over [t_1..t_3, l_1..l_N] with learned
// token-type offsets and no positional encoding, so the output is invariant
// to the order of the frame tokens.
struct LatentAligner {
  AlignerConfig config;
  ad::Tensor latent_tokens;  // [3, width]
  ad::Tensor type_latent;    // [width]
  ad::Tensor type_frame;     // [width]
  ad::Tensor proj_w, proj_b;  // [d', width], [width]; undefined without projection
  std::vector<TransformerBlock> blocks;
  ad::Tensor final_gain, final_bias;

  static LatentAligner create(const AlignerConfig& cfg, Rng& rng);
  bool has_projection() const { return proj_w.defined(); }
  // Length of the scene latent: 3 * model width.
  int latent_dim() const { return 3 * config.model_width; }
  std::vector<ad::Tensor> parameters() const;
};

struct SceneLatent {
  ad::Tensor F;  // [3 * width]
};

SceneLatent align_latents(const FrameTokenSequence& seq, const LatentAligner& aligner);
// Same as align_latents with the token-type offsets treated as zero.
SceneLatent align_latents_without_type_offsets(const FrameTokenSequence& seq, const LatentAligner& aligner);

}  // namespace posefree
