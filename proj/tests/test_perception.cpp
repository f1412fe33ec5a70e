#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "posefree/model.hpp"
#include "posefree/ops.hpp"
#include "posefree/perception.hpp"

using namespace posefree;

namespace {

Image random_image(int res, Rng& rng) {
  Image img(res, res);
  for (auto& v : img.pixels) v = rng.uniform();
  return img;
}

std::vector<Image> random_frames(int n, int res, Rng& rng) {
  std::vector<Image> out;
  for (int i = 0; i < n; ++i) out.push_back(random_image(res, rng));
  return out;
}

double relative_diff(std::span<const double> a, std::span<const double> b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += a[i] * a[i];
  }
  return std::sqrt(num / std::max(den, 1e-300));
}

struct TinyPipeline {
  FrameEncoder encoder;
  LatentAligner aligner;
};

TinyPipeline tiny_pipeline(std::uint64_t seed) {
  const ModelConfig cfg = ModelConfig::from_preset("tiny");
  Rng rng(seed);
  return {FrameEncoder::create(cfg.encoder_channels, rng), LatentAligner::create(cfg.aligner, rng)};
}

}  // namespace

TEST_CASE("encoder token width is the flattened latent size") {
  Rng rng(0);
  // Desk preset: 64x64 frames, 4x downsampling, 4 channels -> 16*16*4.
  const FrameEncoder desk = FrameEncoder::create(ModelConfig::from_preset("desk").encoder_channels, rng);
  const auto one = encode_frames(random_frames(1, 64, rng), desk);
  CHECK(one.tokens.dim(0) == 1);
  CHECK(one.tokens.dim(1) == 16 * 16 * 4);

  const FrameEncoder tiny = FrameEncoder::create(ModelConfig::from_preset("tiny").encoder_channels, rng);
  const auto seq = encode_frames(random_frames(5, 32, rng), tiny);
  CHECK(seq.tokens.dim(0) == 5);
  CHECK(seq.tokens.dim(1) == 4 * 4 * 4);
  CHECK(seq.source_ids == std::vector<int>{0, 1, 2, 3, 4});
}

TEST_CASE("paper preset encoder reaches 32x32x4 on 256x256 frames") {
  Rng rng(1);
  const ModelConfig cfg = ModelConfig::from_preset("paper");
  const FrameEncoder enc = FrameEncoder::create(cfg.encoder_channels, rng);
  CHECK(enc.token_dim(256) == 4096);
  const auto seq = encode_frames(random_frames(2, 256, rng), enc);
  CHECK(seq.tokens.dim(1) == 4096);
}

TEST_CASE("encoder rejects bad frame sets") {
  Rng rng(2);
  const FrameEncoder enc = FrameEncoder::create(ModelConfig::from_preset("tiny").encoder_channels, rng);
  CHECK_THROWS_AS(encode_frames({}, enc), std::invalid_argument);
  CHECK_THROWS_AS(encode_frames(random_frames(1, 30, rng), enc), std::invalid_argument);
  auto mixed = random_frames(1, 32, rng);
  mixed.push_back(random_image(64, rng));
  CHECK_THROWS_AS(encode_frames(mixed, enc), std::invalid_argument);
}

TEST_CASE("duplicated frames give identical token rows") {
  Rng rng(3);
  const auto p = tiny_pipeline(3);
  const Image f = random_image(32, rng);
  const auto seq = encode_frames({f, f}, p.encoder);
  const auto v = seq.tokens.values();
  const auto d = static_cast<std::size_t>(seq.tokens.dim(1));
  CHECK(std::equal(v.begin(), v.begin() + d, v.begin() + d));
}

TEST_CASE("scene latent length is independent of the frame count") {
  Rng rng(4);
  const auto p = tiny_pipeline(4);
  for (int n : {1, 8, 37, 40}) {
    const SceneLatent s = align_latents(encode_frames(random_frames(n, 32, rng), p.encoder), p.aligner);
    CHECK(s.F.numel() == 3 * 64);
    for (double v : s.F.values()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("scene latent is invariant to frame order") {
  Rng rng(5);
  const auto p = tiny_pipeline(5);
  auto frames = random_frames(12, 32, rng);
  const SceneLatent a = align_latents(encode_frames(frames, p.encoder), p.aligner);
  std::reverse(frames.begin(), frames.end());
  std::swap(frames[2], frames[7]);
  const SceneLatent b = align_latents(encode_frames(frames, p.encoder), p.aligner);
  CHECK(relative_diff(a.F.values(), b.F.values()) < 1e-5);
}

TEST_CASE("aligner rejects empty sequences and width mismatches") {
  const auto p = tiny_pipeline(6);
  FrameTokenSequence empty{ad::Tensor::zeros({0, 64}), {}};
  CHECK_THROWS_AS(align_latents(empty, p.aligner), std::invalid_argument);
  FrameTokenSequence wrong{ad::Tensor::zeros({2, 63}), {0, 1}};
  CHECK_THROWS_AS(align_latents(wrong, p.aligner), std::invalid_argument);
}

TEST_CASE("every frame token receives gradient from the scene latent") {
  Rng rng(7);
  const auto p = tiny_pipeline(7);
  const int n = 6;
  FrameTokenSequence seq{ad::Tensor::from_data(rng.normal_vector(n * 64), {n, 64}, true), {0, 1, 2, 3, 4, 5}};
  const SceneLatent s = align_latents(seq, p.aligner);
  ad::sum(ad::mul(s.F, s.F)).backward();
  const auto g = seq.tokens.grad();
  REQUIRE(g.size() == static_cast<std::size_t>(n * 64));
  for (int i = 0; i < n; ++i) {
    double norm = 0.0;
    for (int j = 0; j < 64; ++j) norm += g[i * 64 + j] * g[i * 64 + j];
    CHECK(norm > 0.0);
  }
}

TEST_CASE("token-type offsets change the scene latent") {
  Rng rng(8);
  const auto p = tiny_pipeline(8);
  const auto seq = encode_frames(random_frames(4, 32, rng), p.encoder);
  const SceneLatent with = align_latents(seq, p.aligner);
  const SceneLatent without = align_latents_without_type_offsets(seq, p.aligner);
  CHECK(relative_diff(with.F.values(), without.F.values()) > 1e-6);
}

TEST_CASE("desk aligner keeps 3 x 1024 latents for 1, 8 and 40 frames") {
  Rng rng(9);
  const ModelConfig cfg = ModelConfig::from_preset("desk");
  const LatentAligner aligner = LatentAligner::create(cfg.aligner, rng);
  CHECK_FALSE(aligner.has_projection());
  for (int n : {1, 8, 40}) {
    std::vector<int> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    const FrameTokenSequence seq{ad::Tensor::from_data(rng.normal_vector(static_cast<std::size_t>(n) * 1024), {n, 1024}), ids};
    CHECK(align_latents(seq, aligner).F.numel() == 3 * 1024);
  }
}
