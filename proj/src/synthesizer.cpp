#include "posefree/synthesizer.hpp"

#include <cmath>
#include <stdexcept>

#include "posefree/ops.hpp"

namespace posefree {

ad::Tensor adain(const ad::Tensor& x, const ad::Tensor& y_s, const ad::Tensor& y_b, double eps) {
  if (x.rank() != 3) throw std::invalid_argument("adain: expected [C,H,W], got " + ad::shape_string(x.shape()));
  const auto c = x.dim(0);
  const auto hw = x.dim(1) * x.dim(2);
  if (y_s.numel() != c || y_b.numel() != c) throw std::invalid_argument("adain: style width does not match channels");
  const auto& xv = x.vector();
  const auto& sv = y_s.vector();
  const auto& bv = y_b.vector();
  std::vector<double> normalized(xv.size());
  std::vector<double> inv_sigma(static_cast<std::size_t>(c));
  std::vector<double> out(xv.size());
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const double* src = xv.data() + ch * hw;
    double mu = 0.0;
    for (std::int64_t i = 0; i < hw; ++i) mu += src[i];
    mu /= static_cast<double>(hw);
    double var = 0.0;
    for (std::int64_t i = 0; i < hw; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<double>(hw);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_sigma[ch] = inv;
    for (std::int64_t i = 0; i < hw; ++i) {
      const double n = (src[i] - mu) * inv;
      normalized[ch * hw + i] = n;
      out[ch * hw + i] = sv[ch] * n + bv[ch];
    }
  }
  return ad::make_result(
      std::move(out), x.shape(), {x, y_s, y_b},
      [c, hw, normalized = std::move(normalized), inv_sigma = std::move(inv_sigma)](ad::Node& self) {
        auto gx = self.input_grad(0);
        auto gs = self.input_grad(1);
        auto gb = self.input_grad(2);
        const auto& sv = self.inputs[1]->value;
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const double* dy = self.grad.data() + ch * hw;
          const double* n = normalized.data() + ch * hw;
          double sum_dy = 0.0, sum_dy_n = 0.0;
          for (std::int64_t i = 0; i < hw; ++i) {
            sum_dy += dy[i];
            sum_dy_n += dy[i] * n[i];
          }
          if (!gs.empty()) gs[ch] += sum_dy_n;
          if (!gb.empty()) gb[ch] += sum_dy;
          if (gx.empty()) continue;
          const double mean_dn = sv[ch] * sum_dy / static_cast<double>(hw);
          const double mean_dn_n = sv[ch] * sum_dy_n / static_cast<double>(hw);
          for (std::int64_t i = 0; i < hw; ++i)
            gx[ch * hw + i] += inv_sigma[ch] * (sv[ch] * dy[i] - mean_dn - n[i] * mean_dn_n);
        }
      });
}

NoiseMode parse_noise_mode(const std::string& name) {
  if (name == "fresh") return NoiseMode::fresh;
  if (name == "frozen") return NoiseMode::frozen;
  if (name == "off") return NoiseMode::off;
  throw std::invalid_argument("unknown noise mode '" + name + "' (expected fresh, frozen or off)");
}

std::string to_string(NoiseMode mode) {
  switch (mode) {
    case NoiseMode::fresh:
      return "fresh";
    case NoiseMode::frozen:
      return "frozen";
    case NoiseMode::off:
      return "off";
  }
  return "off";
}

StyleSynthesizer StyleSynthesizer::create(const SynthesizerConfig& cfg, Rng& rng) {
  if (cfg.level_channels.empty() || cfg.level_channels.back() % 3 != 0 || cfg.latent_dim < 1 ||
      cfg.const_channels < 1)
    throw std::invalid_argument("StyleSynthesizer: invalid configuration");
  StyleSynthesizer syn;
  syn.config = cfg;
  syn.const_input = ad::Tensor::from_data(rng.normal_vector(static_cast<std::size_t>(cfg.const_channels) * 16),
                                          {cfg.const_channels, 4, 4}, true);
  int in = cfg.const_channels;
  int res = 4;
  for (std::size_t i = 0; i < cfg.level_channels.size(); ++i) {
    const int out = cfg.level_channels[i];
    SynthesisLevel lv;
    lv.resolution = res;
    lv.conv_w = ad::Tensor::from_data(rng.normal_vector(static_cast<std::size_t>(out) * in * 9,
                                                        std::sqrt(2.0 / (9.0 * in))),
                                      {out, in, 3, 3}, true);
    lv.conv_b = ad::Tensor::zeros({out}, true);
    lv.noise_scale = ad::Tensor::zeros({out}, true);
    lv.frozen_noise = ad::Tensor::from_data(rng.normal_vector(static_cast<std::size_t>(res) * res), {res, res});
    lv.affine_w = ad::Tensor::from_data(
        rng.normal_vector(static_cast<std::size_t>(cfg.latent_dim) * 2 * out, 0.25 / std::sqrt(cfg.latent_dim)),
        {cfg.latent_dim, 2 * out}, true);
    std::vector<double> bias(static_cast<std::size_t>(2 * out), 0.0);
    for (int c = 0; c < out; ++c) bias[c] = 1.0;  // y_s starts at 1
    lv.affine_b = ad::Tensor::from_data(std::move(bias), {2 * out}, true);
    syn.levels.push_back(std::move(lv));
    in = out;
    res *= 2;
  }
  return syn;
}

std::vector<ad::Tensor> StyleSynthesizer::parameters() const {
  std::vector<ad::Tensor> out{const_input};
  for (const auto& lv : levels)
    for (const auto& t : {lv.conv_w, lv.conv_b, lv.noise_scale, lv.affine_w, lv.affine_b}) out.push_back(t);
  return out;
}

std::vector<ad::Tensor> StyleSynthesizer::state_tensors() const {
  std::vector<ad::Tensor> out = parameters();
  for (const auto& lv : levels) out.push_back(lv.frozen_noise);
  return out;
}

TriPlane synthesize_triplane(const SceneLatent& latent, const StyleSynthesizer& syn, NoiseMode mode, Rng* rng,
                             double extent) {
  const int dim = syn.config.latent_dim;
  if (latent.F.numel() != dim)
    throw std::invalid_argument("synthesize_triplane: latent length " + std::to_string(latent.F.numel()) +
                                ", synthesizer expects " + std::to_string(dim));
  if (mode == NoiseMode::fresh && rng == nullptr)
    throw std::invalid_argument("synthesize_triplane: fresh noise needs an rng");
  const ad::Tensor f = latent.F.reshaped({1, dim});
  ad::Tensor x = syn.const_input;
  for (std::size_t i = 0; i < syn.levels.size(); ++i) {
    const auto& lv = syn.levels[i];
    if (i > 0) x = ad::upsample_nearest2x(x);
    x = ad::conv2d(x, lv.conv_w, lv.conv_b, 1, 1);
    if (mode == NoiseMode::frozen) {
      x = ad::add_channel_noise(x, lv.noise_scale, lv.frozen_noise);
    } else if (mode == NoiseMode::fresh) {
      const auto n = static_cast<std::size_t>(lv.resolution) * lv.resolution;
      x = ad::add_channel_noise(x, lv.noise_scale,
                                ad::Tensor::from_data(rng->normal_vector(n), {lv.resolution, lv.resolution}));
    }
    x = ad::leaky_relu(x, 0.2);
    const auto c = x.dim(0);
    const ad::Tensor style = ad::linear(f, lv.affine_w, lv.affine_b);
    x = adain(x, ad::slice_cols(style, 0, c).reshaped({c}), ad::slice_cols(style, c, 2 * c).reshaped({c}));
  }
  return TriPlane{x, extent};
}

}  // namespace posefree
