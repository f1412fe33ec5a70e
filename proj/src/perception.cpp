#include "posefree/perception.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "posefree/ops.hpp"

namespace posefree {

namespace {

ad::Tensor gaussian(Rng& rng, ad::Shape shape, double stddev) {
  const auto n = static_cast<std::size_t>(ad::shape_numel(shape));
  return ad::Tensor::from_data(rng.normal_vector(n, stddev), std::move(shape), true);
}

ad::Tensor dense(Rng& rng, int in, int out, double gain = 1.0) {
  return gaussian(rng, {in, out}, gain / std::sqrt(static_cast<double>(in)));
}

ad::Tensor zeros(std::int64_t n) { return ad::Tensor::zeros({n}, true); }
ad::Tensor ones(std::int64_t n) { return ad::Tensor::full({n}, 1.0, true); }

SceneLatent align(const FrameTokenSequence& seq, const LatentAligner& al, bool use_type_offsets) {
  const auto& cfg = al.config;
  if (seq.tokens.rank() != 2 || seq.tokens.dim(0) < 1)
    throw std::invalid_argument("align_latents: need at least one frame token");
  if (seq.tokens.dim(1) != cfg.token_dim)
    throw std::invalid_argument("align_latents: token width " + std::to_string(seq.tokens.dim(1)) +
                                ", aligner expects " + std::to_string(cfg.token_dim));

  ad::Tensor frames = al.has_projection() ? ad::linear(seq.tokens, al.proj_w, al.proj_b) : seq.tokens;
  ad::Tensor prefix = al.latent_tokens;
  if (use_type_offsets) {
    frames = ad::add_row(frames, al.type_frame);
    prefix = ad::add_row(prefix, al.type_latent);
  }
  ad::Tensor x = ad::concat_rows({prefix, frames});

  for (const auto& b : al.blocks) {
    ad::Tensor h = ad::layer_norm(x, b.ln1_gain, b.ln1_bias);
    ad::Tensor a = ad::attention(ad::linear(h, b.wq, b.bq), ad::linear(h, b.wk, b.bk), ad::linear(h, b.wv, b.bv),
                                 cfg.heads);
    x = ad::add(x, ad::linear(a, b.wo, b.bo));
    h = ad::layer_norm(x, b.ln2_gain, b.ln2_bias);
    x = ad::add(x, ad::linear(ad::gelu(ad::linear(h, b.ff1_w, b.ff1_b)), b.ff2_w, b.ff2_b));
  }
  x = ad::layer_norm(x, al.final_gain, al.final_bias);
  return SceneLatent{ad::slice_rows(x, 0, 3).reshaped({3LL * cfg.model_width})};
}

}  // namespace

FrameEncoder FrameEncoder::create(const std::vector<int>& channels, Rng& rng) {
  if (channels.size() < 2 || channels.front() != 3)
    throw std::invalid_argument("FrameEncoder: channel list must start at 3 and have at least one stage");
  FrameEncoder enc;
  for (std::size_t i = 0; i + 1 < channels.size(); ++i) {
    const int in = channels[i], out = channels[i + 1];
    enc.weights.push_back(gaussian(rng, {out, in, 3, 3}, std::sqrt(2.0 / (9.0 * in))));
    enc.biases.push_back(zeros(out));
  }
  enc.latent_channels = channels.back();
  return enc;
}

int FrameEncoder::token_dim(int resolution) const {
  const int side = resolution / downsample();
  return side * side * latent_channels;
}

std::vector<ad::Tensor> FrameEncoder::parameters() const {
  std::vector<ad::Tensor> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(weights[i]);
    out.push_back(biases[i]);
  }
  return out;
}

FrameTokenSequence encode_frames(const std::vector<Image>& frames, const FrameEncoder& enc) {
  if (frames.empty()) throw std::invalid_argument("encode_frames: no frames");
  const int h = frames[0].height, w = frames[0].width;
  const int f = enc.downsample();
  if (h % f != 0 || w % f != 0)
    throw std::invalid_argument("encode_frames: resolution " + std::to_string(h) + "x" + std::to_string(w) +
                                " not divisible by " + std::to_string(f));
  FrameTokenSequence seq;
  std::vector<ad::Tensor> rows;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (!frames[i].same_shape(frames[0])) throw std::invalid_argument("encode_frames: mixed frame resolutions");
    ad::Tensor x = ad::hwc_to_chw(frames[i].to_tensor(), h, w);
    for (std::size_t l = 0; l < enc.weights.size(); ++l) {
      x = ad::conv2d(x, enc.weights[l], enc.biases[l], 2, 1);
      if (l + 1 < enc.weights.size()) x = ad::leaky_relu(x, 0.2);
    }
    rows.push_back(x.reshaped({1, x.numel()}));
    seq.source_ids.push_back(static_cast<int>(i));
  }
  seq.tokens = ad::concat_rows(rows);
  return seq;
}

LatentAligner LatentAligner::create(const AlignerConfig& cfg, Rng& rng) {
  if (cfg.token_dim < 1 || cfg.model_width < 1 || cfg.layers < 0 || cfg.heads < 1 || cfg.model_width % cfg.heads)
    throw std::invalid_argument("LatentAligner: invalid configuration");
  LatentAligner al;
  al.config = cfg;
  const int d = cfg.model_width;
  if (cfg.token_dim != d) {
    al.proj_w = dense(rng, cfg.token_dim, d);
    al.proj_b = zeros(d);
  }
  al.latent_tokens = gaussian(rng, {3, d}, 0.02);
  al.type_latent = gaussian(rng, {d}, 0.02);
  al.type_frame = gaussian(rng, {d}, 0.02);
  const double residual_gain = 1.0 / std::sqrt(2.0 * std::max(cfg.layers, 1));
  for (int l = 0; l < cfg.layers; ++l) {
    TransformerBlock b;
    b.ln1_gain = ones(d);
    b.ln1_bias = zeros(d);
    b.wq = dense(rng, d, d);
    b.bq = zeros(d);
    b.wk = dense(rng, d, d);
    b.bk = zeros(d);
    b.wv = dense(rng, d, d);
    b.bv = zeros(d);
    b.wo = dense(rng, d, d, residual_gain);
    b.bo = zeros(d);
    b.ln2_gain = ones(d);
    b.ln2_bias = zeros(d);
    b.ff1_w = dense(rng, d, cfg.feed_forward);
    b.ff1_b = zeros(cfg.feed_forward);
    b.ff2_w = dense(rng, cfg.feed_forward, d, residual_gain);
    b.ff2_b = zeros(d);
    al.blocks.push_back(std::move(b));
  }
  al.final_gain = ones(d);
  al.final_bias = zeros(d);
  return al;
}

std::vector<ad::Tensor> LatentAligner::parameters() const {
  std::vector<ad::Tensor> out;
  if (has_projection()) {
    out.push_back(proj_w);
    out.push_back(proj_b);
  }
  out.push_back(latent_tokens);
  out.push_back(type_latent);
  out.push_back(type_frame);
  for (const auto& b : blocks)
    for (const auto& t : {b.ln1_gain, b.ln1_bias, b.wq, b.bq, b.wk, b.bk, b.wv, b.bv, b.wo, b.bo, b.ln2_gain,
                          b.ln2_bias, b.ff1_w, b.ff1_b, b.ff2_w, b.ff2_b})
      out.push_back(t);
  out.push_back(final_gain);
  out.push_back(final_bias);
  return out;
}

SceneLatent align_latents(const FrameTokenSequence& seq, const LatentAligner& aligner) {
  return align(seq, aligner, true);
}

SceneLatent align_latents_without_type_offsets(const FrameTokenSequence& seq, const LatentAligner& aligner) {
  return align(seq, aligner, false);
}

}  // namespace posefree
