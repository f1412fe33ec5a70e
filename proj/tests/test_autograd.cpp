#include <functional>

#include "doctest.h"
#include "posefree/ops.hpp"
#include "posefree/rng.hpp"
#include "support/finite_difference.hpp"

using namespace posefree;
using posefree::testing::central_difference;
using posefree::testing::relative_error;

namespace {

ad::Tensor random_param(Rng& rng, ad::Shape shape, double stddev = 1.0) {
  auto n = static_cast<std::size_t>(ad::shape_numel(shape));
  return ad::Tensor::from_data(rng.normal_vector(n, stddev), std::move(shape), true);
}

// Checks every (or a strided subset of) entries of each parameter against the
// finite-difference oracle for the contraction loss sum(w * f(params)).
void check_gradients(std::vector<ad::Tensor> params, const std::function<ad::Tensor()>& f, double tol = 1e-6,
                     std::size_t max_entries = 40) {
  Rng rng(99);
  const auto probe = f();
  const auto weights = rng.normal_vector(static_cast<std::size_t>(probe.numel()));
  auto loss_value = [&] {
    ad::NoGradGuard guard;
    return ad::dot_constant(f(), weights).item();
  };
  for (auto& p : params) p.zero_grad();
  ad::dot_constant(f(), weights).backward();
  for (auto& p : params) {
    REQUIRE(p.has_grad());
    const std::size_t n = p.vector().size();
    const std::size_t stride = std::max<std::size_t>(1, n / max_entries);
    for (std::size_t i = 0; i < n; i += stride) {
      const double numeric = central_difference(p, i, loss_value);
      INFO("entry " << i << " analytic " << p.grad()[i] << " numeric " << numeric);
      CHECK(relative_error(p.grad()[i], numeric, 1e-6) < tol);
    }
  }
}

}  // namespace

TEST_CASE("elementwise and reduction gradients match finite differences") {
  Rng rng(1);
  auto a = random_param(rng, {3, 4});
  auto b = random_param(rng, {3, 4});
  check_gradients({a, b}, [&] { return ad::mul(ad::add(a, b), ad::sub(a, b)); });
  check_gradients({a}, [&] { return ad::softplus(a); });
  check_gradients({a}, [&] { return ad::sigmoid(a); });
  check_gradients({a}, [&] { return ad::gelu(a); });
  check_gradients({a, b}, [&] { return ad::mse(a, b); });
  check_gradients({a}, [&] { return ad::mean(ad::scale(a, 3.0)); });
}

TEST_CASE("matrix operations gradients") {
  Rng rng(2);
  auto x = random_param(rng, {5, 4});
  auto w = random_param(rng, {4, 3});
  auto b = random_param(rng, {3});
  auto v = random_param(rng, {4});
  check_gradients({x, w}, [&] { return ad::matmul(x, w); });
  check_gradients({x, w, b}, [&] { return ad::linear(x, w, b); });
  check_gradients({x, v}, [&] { return ad::add_row(x, v); });
  check_gradients({x}, [&] { return ad::slice_rows(ad::concat_rows({x, x}), 3, 7); });
  check_gradients({x}, [&] { return ad::slice_cols(x, 1, 3); });
}

TEST_CASE("layer norm and attention gradients") {
  Rng rng(3);
  auto x = random_param(rng, {6, 8});
  auto g = random_param(rng, {8});
  auto beta = random_param(rng, {8});
  check_gradients({x, g, beta}, [&] { return ad::layer_norm(x, g, beta); }, 1e-5);
  auto q = random_param(rng, {5, 8});
  auto k = random_param(rng, {5, 8});
  auto v = random_param(rng, {5, 8});
  check_gradients({q, k, v}, [&] { return ad::attention(q, k, v, 2); }, 1e-5);
}

TEST_CASE("convolution and resampling gradients") {
  Rng rng(4);
  auto x = random_param(rng, {3, 6, 6});
  auto w = random_param(rng, {4, 3, 3, 3}, 0.3);
  auto b = random_param(rng, {4});
  check_gradients({x, w, b}, [&] { return ad::conv2d(x, w, b, 1, 1); });
  check_gradients({x, w, b}, [&] { return ad::conv2d(x, w, b, 2, 1); });
  check_gradients({x}, [&] { return ad::upsample_nearest2x(x); });
  auto s = random_param(rng, {3});
  auto noise = random_param(rng, {6, 6});
  check_gradients({x, s, noise}, [&] { return ad::add_channel_noise(x, s, noise); });
  check_gradients({x, s}, [&] { return ad::add_channel_bias(x, s); });
  check_gradients({x}, [&] { return ad::concat_channels({x, ad::scale(x, 2.0)}); });
  auto pix = random_param(rng, {12, 3});
  check_gradients({pix}, [&] { return ad::chw_to_hwc(ad::hwc_to_chw(pix, 3, 4)); });
}

TEST_CASE("conv2d matches a direct convolution") {
  Rng rng(5);
  auto x = random_param(rng, {2, 5, 5});
  auto w = random_param(rng, {3, 2, 3, 3});
  auto b = random_param(rng, {3});
  auto y = ad::conv2d(x, w, b, 2, 1);
  REQUIRE(y.shape() == ad::Shape{3, 3, 3});
  for (int o = 0; o < 3; ++o)
    for (int oy = 0; oy < 3; ++oy)
      for (int ox = 0; ox < 3; ++ox) {
        double s = b.values()[o];
        for (int c = 0; c < 2; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * 2 + ky - 1, ix = ox * 2 + kx - 1;
              if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
              s += w.values()[((o * 2 + c) * 3 + ky) * 3 + kx] * x.values()[(c * 5 + iy) * 5 + ix];
            }
        CHECK(y.values()[(o * 3 + oy) * 3 + ox] == doctest::Approx(s).epsilon(1e-12));
      }
}

TEST_CASE("no-grad guard suppresses recording") {
  Rng rng(6);
  auto a = random_param(rng, {2, 2});
  {
    ad::NoGradGuard guard;
    auto y = ad::scale(a, 2.0);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(ad::scale(a, 2.0).requires_grad());
}

TEST_CASE("shared subexpressions accumulate gradients") {
  auto a = ad::Tensor::from_data({1.5}, {1}, true);
  auto y = ad::mul(a, a);  // a^2
  auto z = ad::add(y, y);  // 2 a^2
  z.backward();
  CHECK(a.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("shape errors are reported") {
  auto a = ad::Tensor::zeros({2, 3});
  auto b = ad::Tensor::zeros({3, 2});
  CHECK_THROWS_AS(ad::add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(ad::matmul(a, a), std::invalid_argument);
  CHECK_THROWS_AS(ad::Tensor::from_data({1.0, 2.0}, {3}), std::invalid_argument);
}

TEST_CASE("rng state round trip reproduces the stream") {
  Rng rng(42);
  rng.normal();  // leaves a cached spare
  const auto saved = rng.state();
  std::vector<double> first;
  for (int i = 0; i < 5; ++i) first.push_back(rng.normal() + rng.uniform());
  Rng other(7);
  other.restore(saved);
  for (int i = 0; i < 5; ++i) CHECK(other.normal() + other.uniform() == first[i]);
}
