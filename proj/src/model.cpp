#include "posefree/model.hpp"

#include <stdexcept>

namespace posefree {

ModelConfig ModelConfig::from_preset(const std::string& name) {
  ModelConfig c;
  c.preset = name;
  if (name == "paper") {
    // 256x256 frames, 8x encoder: 32*32*4 = 4096 tokens, projected to 1024.
    c.frame_resolution = 256;
    c.encoder_channels = {3, 32, 64, 4};
    c.aligner = AlignerConfig{4096, 1024, 16, 8, 2048};
    c.synthesizer.latent_dim = 3 * 1024;
    c.synthesizer.const_channels = 1536;
    c.synthesizer.level_channels = {768, 384, 192, 96, 240};
    c.decoder_hidden = 64;
  } else if (name == "desk") {
    // 64x64 frames, 4x encoder: 16*16*4 = 1024 tokens.
    c.frame_resolution = 64;
    c.encoder_channels = {3, 16, 4};
    c.aligner = AlignerConfig{1024, 1024, 4, 4, 512};
    c.synthesizer.latent_dim = 3 * 1024;
    c.synthesizer.const_channels = 256;
    c.synthesizer.level_channels = {128, 128, 96, 96};
    c.decoder_hidden = 64;
  } else if (name == "tiny") {
    // 32x32 frames, 8x encoder: 4*4*4 = 64 tokens.
    c.frame_resolution = 32;
    c.encoder_channels = {3, 16, 32, 4};
    c.aligner = AlignerConfig{64, 64, 2, 4, 128};
    c.synthesizer.latent_dim = 3 * 64;
    c.synthesizer.const_channels = 64;
    c.synthesizer.level_channels = {64, 48, 32, 48};
    c.decoder_hidden = 16;
  } else {
    throw std::invalid_argument("unknown model preset '" + name + "' (expected paper, desk or tiny)");
  }
  return c;
}

void ModelConfig::validate() const {
  if (encoder_channels.size() < 2) throw std::invalid_argument("model: encoder needs at least one stage");
  const int f = 1 << (encoder_channels.size() - 1);
  if (frame_resolution % f != 0) throw std::invalid_argument("model: frame resolution not divisible by encoder stride");
  const int side = frame_resolution / f;
  if (side * side * encoder_channels.back() != aligner.token_dim)
    throw std::invalid_argument("model: encoder latent size does not match aligner token width");
  if (synthesizer.latent_dim != 3 * aligner.model_width)
    throw std::invalid_argument("model: synthesizer latent width must be 3 * aligner width");
  if (decoder_hidden < 1) throw std::invalid_argument("model: decoder_hidden must be >= 1");
}

Model Model::create(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  Model m;
  m.config = cfg;
  m.encoder = FrameEncoder::create(cfg.encoder_channels, rng);
  m.aligner = LatentAligner::create(cfg.aligner, rng);
  m.synthesizer = StyleSynthesizer::create(cfg.synthesizer, rng);
  m.decoder = RadianceDecoder::create(3 * cfg.synthesizer.plane_channels(), cfg.decoder_hidden, rng,
                                      cfg.decoder_density_bias);
  return m;
}

std::vector<ad::Tensor> Model::parameters() const {
  std::vector<ad::Tensor> out;
  for (const auto& group : {encoder.parameters(), aligner.parameters(), synthesizer.parameters(), decoder.parameters()})
    out.insert(out.end(), group.begin(), group.end());
  return out;
}

std::vector<std::pair<std::string, ad::Tensor>> Model::named_state() const {
  std::vector<std::pair<std::string, ad::Tensor>> out;
  auto add = [&](const std::string& prefix, const std::vector<ad::Tensor>& ts) {
    for (std::size_t i = 0; i < ts.size(); ++i) out.emplace_back(prefix + "." + std::to_string(i), ts[i]);
  };
  add("encoder", encoder.parameters());
  add("aligner", aligner.parameters());
  add("synthesizer", synthesizer.parameters());
  add("decoder", decoder.parameters());
  std::vector<ad::Tensor> noise;
  for (const auto& lv : synthesizer.levels) noise.push_back(lv.frozen_noise);
  add("synthesizer_noise", noise);
  return out;
}

Reconstruction forward(const Model& model, const std::vector<Image>& frames, Rng* noise_rng) {
  const auto seq = encode_frames(frames, model.encoder);
  SceneLatent latent = align_latents(seq, model.aligner);
  TriPlane tp = synthesize_triplane(latent, model.synthesizer, model.config.noise_mode, noise_rng, model.config.extent);
  return Reconstruction{std::move(latent), std::move(tp)};
}

}  // namespace posefree
