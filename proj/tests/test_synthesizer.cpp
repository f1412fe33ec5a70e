#include <cmath>

#include "doctest.h"
#include "posefree/model.hpp"
#include "posefree/ops.hpp"
#include "posefree/synthesizer.hpp"
#include "support/finite_difference.hpp"

using namespace posefree;
using posefree::testing::central_difference;
using posefree::testing::relative_error;

namespace {

// Oracle: per-channel mean and population std by direct summation.
std::pair<double, double> channel_moments(std::span<const double> v, int c, int hw) {
  double mean = 0.0;
  for (int i = 0; i < hw; ++i) mean += v[c * hw + i];
  mean /= hw;
  double var = 0.0;
  for (int i = 0; i < hw; ++i) var += (v[c * hw + i] - mean) * (v[c * hw + i] - mean);
  return {mean, std::sqrt(var / hw)};
}

SceneLatent random_latent(int dim, Rng& rng, bool grad = false) {
  return SceneLatent{ad::Tensor::from_data(rng.normal_vector(dim), {dim}, grad)};
}

double frobenius_diff(const TriPlane& a, const TriPlane& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.planes.vector().size(); ++i) {
    const double d = a.planes.vector()[i] - b.planes.vector()[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("adain with unit style normalizes every channel") {
  Rng rng(0);
  const int c = 5, hw = 64;
  const auto x = ad::Tensor::from_data(rng.normal_vector(c * hw, 3.0), {c, 8, 8});
  const auto y = adain(x, ad::Tensor::full({c}, 1.0), ad::Tensor::zeros({c}));
  for (int ch = 0; ch < c; ++ch) {
    const auto [mean, sd] = channel_moments(y.values(), ch, hw);
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(sd - 1.0) < 1e-4);
  }
}

TEST_CASE("adain output moments follow the style") {
  Rng rng(1);
  const int c = 4, hw = 256;
  auto xv = rng.normal_vector(c * hw);
  for (auto& v : xv) v = 0.3 * v + 4.0;
  const auto y = adain(ad::Tensor::from_data(xv, {c, 16, 16}), ad::Tensor::full({c}, 2.5), ad::Tensor::full({c}, -1.0));
  for (int ch = 0; ch < c; ++ch) {
    const auto [mean, sd] = channel_moments(y.values(), ch, hw);
    CHECK(std::abs(mean + 1.0) < 1e-4);
    CHECK(std::abs(sd - 2.5) < 1e-3);
  }
}

TEST_CASE("adain maps a constant channel to its bias") {
  const auto x = ad::Tensor::full({1, 4, 4}, 7.0);
  const auto y = adain(x, ad::Tensor::full({1}, 3.0), ad::Tensor::full({1}, 0.25));
  for (double v : y.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("adain gradients match finite differences") {
  Rng rng(2);
  auto x = ad::Tensor::from_data(rng.normal_vector(3 * 16), {3, 4, 4}, true);
  auto ys = ad::Tensor::from_data(rng.normal_vector(3), {3}, true);
  auto yb = ad::Tensor::from_data(rng.normal_vector(3), {3}, true);
  const auto w = rng.normal_vector(3 * 16);
  auto loss = [&] { return ad::dot_constant(adain(x, ys, yb), w); };
  loss().backward();
  for (ad::Tensor* t : {&x, &ys, &yb}) {
    const std::vector<double> g(t->grad().begin(), t->grad().end());
    for (std::size_t i = 0; i < g.size(); i += 5) {
      const double fd = central_difference(*t, i, [&] {
        ad::NoGradGuard guard;
        return loss().item();
      });
      CHECK(relative_error(g[i], fd) < 1e-5);
    }
  }
}

TEST_CASE("paper preset synthesizer emits three 64x64x80 planes") {
  Rng rng(3);
  const ModelConfig cfg = ModelConfig::from_preset("paper");
  const StyleSynthesizer syn = StyleSynthesizer::create(cfg.synthesizer, rng);
  const TriPlane tp = synthesize_triplane(random_latent(cfg.synthesizer.latent_dim, rng), syn, NoiseMode::off);
  CHECK(tp.channels() == 80);
  CHECK(tp.height() == 64);
  CHECK(tp.width() == 64);
  CHECK(tp.feature_dim() == 240);
}

TEST_CASE("desk preset synthesizer emits three 32x32x32 planes") {
  Rng rng(4);
  const ModelConfig cfg = ModelConfig::from_preset("desk");
  const StyleSynthesizer syn = StyleSynthesizer::create(cfg.synthesizer, rng);
  const TriPlane tp = synthesize_triplane(random_latent(cfg.synthesizer.latent_dim, rng), syn, NoiseMode::frozen);
  CHECK(tp.channels() == 32);
  CHECK(tp.height() == 32);
  CHECK(tp.width() == 32);
}

TEST_CASE("level count matches log2 of the plane size plus one") {
  for (const char* name : {"paper", "desk", "tiny"}) {
    const auto sc = ModelConfig::from_preset(name).synthesizer;
    CHECK(static_cast<int>(sc.level_channels.size()) == static_cast<int>(std::log2(sc.plane_resolution() / 4)) + 1);
  }
}

TEST_CASE("noise off and frozen are deterministic, fresh noise varies") {
  Rng rng(5);
  const auto sc = ModelConfig::from_preset("tiny").synthesizer;
  StyleSynthesizer syn = StyleSynthesizer::create(sc, rng);
  for (auto& lv : syn.levels)
    for (auto& v : lv.noise_scale.mutable_values()) v = 0.5;
  const SceneLatent f = random_latent(sc.latent_dim, rng);
  CHECK(frobenius_diff(synthesize_triplane(f, syn, NoiseMode::off), synthesize_triplane(f, syn, NoiseMode::off)) == 0.0);
  CHECK(frobenius_diff(synthesize_triplane(f, syn, NoiseMode::frozen), synthesize_triplane(f, syn, NoiseMode::frozen)) == 0.0);
  Rng a(1), b(2);
  CHECK(frobenius_diff(synthesize_triplane(f, syn, NoiseMode::fresh, &a), synthesize_triplane(f, syn, NoiseMode::fresh, &b)) > 0.0);
  CHECK_THROWS_AS(synthesize_triplane(f, syn, NoiseMode::fresh, nullptr), std::invalid_argument);
}

TEST_CASE("distinct latents give distinct planes at init") {
  Rng rng(6);
  const auto sc = ModelConfig::from_preset("tiny").synthesizer;
  const StyleSynthesizer syn = StyleSynthesizer::create(sc, rng);
  for (int pair = 0; pair < 10; ++pair) {
    const auto a = synthesize_triplane(random_latent(sc.latent_dim, rng), syn, NoiseMode::off);
    const auto b = synthesize_triplane(random_latent(sc.latent_dim, rng), syn, NoiseMode::off);
    CHECK(frobenius_diff(a, b) > 0.0);
  }
}

TEST_CASE("plane magnitudes at init stay in a sane range") {
  Rng rng(7);
  for (const char* name : {"desk", "tiny"}) {
    const auto sc = ModelConfig::from_preset(name).synthesizer;
    const StyleSynthesizer syn = StyleSynthesizer::create(sc, rng);
    const auto tp = synthesize_triplane(random_latent(sc.latent_dim, rng), syn, NoiseMode::frozen);
    const auto& v = tp.planes.vector();
    double mean = 0.0, sq = 0.0;
    for (double x : v) mean += x;
    mean /= v.size();
    for (double x : v) sq += (x - mean) * (x - mean);
    const double sd = std::sqrt(sq / v.size());
    CHECK(sd >= 0.1);
    CHECK(sd <= 10.0);
  }
}

TEST_CASE("width mismatch between latent and affine maps is rejected") {
  Rng rng(8);
  const auto sc = ModelConfig::from_preset("tiny").synthesizer;
  const StyleSynthesizer syn = StyleSynthesizer::create(sc, rng);
  CHECK_THROWS_AS(synthesize_triplane(random_latent(sc.latent_dim + 1, rng), syn, NoiseMode::off), std::invalid_argument);
}

TEST_CASE("plane gradients reach the latent and every affine map") {
  Rng rng(9);
  const auto sc = ModelConfig::from_preset("tiny").synthesizer;
  StyleSynthesizer syn = StyleSynthesizer::create(sc, rng);
  SceneLatent f = random_latent(sc.latent_dim, rng, true);
  std::vector<double> w(static_cast<std::size_t>(sc.level_channels.back()) * sc.plane_resolution() * sc.plane_resolution());
  for (auto& v : w) v = rng.normal();
  auto loss = [&] { return ad::dot_constant(synthesize_triplane(f, syn, NoiseMode::off).planes, w); };
  loss().backward();

  auto check_entries = [&](ad::Tensor& t) {
    const std::vector<double> g(t.grad().begin(), t.grad().end());
    REQUIRE(!g.empty());
    Rng pick(t.numel());
    for (int k = 0; k < 5; ++k) {
      const auto i = static_cast<std::size_t>(pick.uniform_int(0, t.numel() - 1));
      const double fd = central_difference(t, i, [&] {
        ad::NoGradGuard guard;
        return loss().item();
      }, 1e-5);
      CHECK(relative_error(g[i], fd, 1e-6) < 1e-3);
    }
  };
  check_entries(f.F);
  for (auto& lv : syn.levels) check_entries(lv.affine_w);
}
