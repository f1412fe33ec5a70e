#include "posefree/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

namespace posefree::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using Arr = Eigen::Map<Eigen::ArrayXd>;
using ConstArr = Eigen::Map<const Eigen::ArrayXd>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank)
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_string(a.shape()));
}

template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df) {
  const auto& x = a.vector();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return make_result(std::move(y), a.shape(), {a}, [df](Node& self) {
    auto g = self.input_grad(0);
    const auto& xin = self.inputs[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(xin[i], self.value[i]);
  });
}

// Transcendentals are evaluated into freshly allocated (aligned) Eigen arrays.
// Writing through an unaligned map would peel a buffer-dependent number of
// leading elements onto the scalar path, whose rounding differs from the
// packet path, and break bitwise reproducibility.
std::vector<double> to_vector(const Eigen::ArrayXd& a) { return std::vector<double>(a.data(), a.data() + a.size()); }

void accumulate(std::span<double> g, const Eigen::ArrayXd& d) {
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += d[static_cast<Eigen::Index>(i)];
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> y(a.vector());
  const auto& bv = b.vector();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return make_result(std::move(y), a.shape(), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto g = self.input_grad(k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> y(a.vector());
  const auto& bv = b.vector();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return make_result(std::move(y), a.shape(), {a, b}, [](Node& self) {
    auto ga = self.input_grad(0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    auto gb = self.input_grad(1);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> y(a.vector());
  const auto& bv = b.vector();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return make_result(std::move(y), a.shape(), {a, b}, [](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    auto ga = self.input_grad(0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * bv[i];
    auto gb = self.input_grad(1);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * av[i];
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> y(a.vector());
  for (auto& v : y) v *= s;
  return make_result(std::move(y), a.shape(), {a}, [s](Node& self) {
    auto g = self.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> y(a.vector());
  for (auto& v : y) v += s;
  return make_result(std::move(y), a.shape(), {a}, [](Node& self) {
    auto g = self.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_result({s}, {1}, {a}, [](Node& self) {
    auto g = self.input_grad(0);
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor weighted_sum(const std::vector<Tensor>& terms, const std::vector<double>& weights) {
  if (terms.size() != weights.size()) throw std::invalid_argument("weighted_sum: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].numel() != 1) throw std::invalid_argument("weighted_sum: terms must be scalars");
    s += weights[i] * terms[i].item();
  }
  return make_result({s}, {1}, terms, [w = weights](Node& self) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      auto g = self.input_grad(i);
      if (!g.empty()) g[0] += w[i] * self.grad[0];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw std::invalid_argument("matmul: inner dimension mismatch");
  std::vector<double> y(static_cast<std::size_t>(m * n));
  MapMat(y.data(), m, n).noalias() = ConstMapMat(a.values().data(), m, k) * ConstMapMat(b.values().data(), k, n);
  return make_result(std::move(y), {m, n}, {a, b}, [m, k, n](Node& self) {
    ConstMapMat dy(self.grad.data(), m, n);
    if (auto ga = self.input_grad(0); !ga.empty())
      MapMat(ga.data(), m, k).noalias() += dy * ConstMapMat(self.inputs[1]->value.data(), k, n).transpose();
    if (auto gb = self.input_grad(1); !gb.empty())
      MapMat(gb.data(), k, n).noalias() += ConstMapMat(self.inputs[0]->value.data(), m, k).transpose() * dy;
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const auto n = x.dim(0), in = x.dim(1), out = weight.dim(1);
  if (weight.dim(0) != in) throw std::invalid_argument("linear: input width " + std::to_string(in) +
                                                       " does not match weight " + shape_string(weight.shape()));
  if (bias.numel() != out) throw std::invalid_argument("linear: bias size mismatch");
  std::vector<double> y(static_cast<std::size_t>(n * out));
  MapMat ym(y.data(), n, out);
  ym.noalias() = ConstMapMat(x.values().data(), n, in) * ConstMapMat(weight.values().data(), in, out);
  ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), out);
  return make_result(std::move(y), {n, out}, {x, weight, bias}, [n, in, out](Node& self) {
    ConstMapMat dy(self.grad.data(), n, out);
    if (auto gx = self.input_grad(0); !gx.empty())
      MapMat(gx.data(), n, in).noalias() += dy * ConstMapMat(self.inputs[1]->value.data(), in, out).transpose();
    if (auto gw = self.input_grad(1); !gw.empty())
      MapMat(gw.data(), in, out).noalias() += ConstMapMat(self.inputs[0]->value.data(), n, in).transpose() * dy;
    // Plain loop: Eigen's partial reductions peel by address, so their
    // rounding would depend on where the buffer happens to live.
    if (auto gb = self.input_grad(2); !gb.empty())
      for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t c = 0; c < out; ++c) gb[c] += self.grad[r * out + c];
  });
}

Tensor add_row(const Tensor& x, const Tensor& v) {
  require_rank(x, 2, "add_row");
  const auto n = x.dim(0), d = x.dim(1);
  if (v.numel() != d) throw std::invalid_argument("add_row: width mismatch");
  std::vector<double> y(x.vector());
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t c = 0; c < d; ++c) y[r * d + c] += v.values()[c];
  return make_result(std::move(y), x.shape(), {x, v}, [n, d](Node& self) {
    if (auto gx = self.input_grad(0); !gx.empty())
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    if (auto gv = self.input_grad(1); !gv.empty())
      for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t c = 0; c < d; ++c) gv[c] += self.grad[r * d + c];
  });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0 ? x : slope * x; },
      [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Tensor softplus(const Tensor& a) {
  const auto n = static_cast<Eigen::Index>(a.numel());
  const ConstArr x(a.values().data(), n);
  // max(x, 0) + log(1 + exp(-|x|))
  const Eigen::ArrayXd y = x.max(0.0) + (1.0 + (-x.abs()).exp()).log();
  return make_result(to_vector(y), a.shape(), {a}, [n](Node& self) {
    const ConstArr xin(self.inputs[0]->value.data(), n);
    const Eigen::ArrayXd d = ConstArr(self.grad.data(), n) / (1.0 + (-xin).exp());
    accumulate(self.input_grad(0), d);
  });
}

Tensor sigmoid(const Tensor& a) {
  const auto n = static_cast<Eigen::Index>(a.numel());
  const Eigen::ArrayXd y = 1.0 / (1.0 + (-ConstArr(a.values().data(), n)).exp());
  return make_result(to_vector(y), a.shape(), {a}, [n](Node& self) {
    auto g = self.input_grad(0);
    const ConstArr yv(self.value.data(), n);
    Arr(g.data(), n) += ConstArr(self.grad.data(), n) * yv * (1.0 - yv);
  });
}

Tensor gelu(const Tensor& a) {
  // tanh approximation
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x))); },
      [](double x, double) {
        const double u = c * (x + 0.044715 * x * x * x);
        const double t = std::tanh(u);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank(x, 2, "layer_norm");
  const auto n = x.dim(0), d = x.dim(1);
  if (gain.numel() != d || bias.numel() != d) throw std::invalid_argument("layer_norm: parameter width mismatch");
  std::vector<double> y(x.vector().size());
  std::vector<double> xhat(y.size());
  std::vector<double> inv_std(static_cast<std::size_t>(n));
  const auto& xv = x.vector();
  for (std::int64_t r = 0; r < n; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::int64_t c = 0; c < d; ++c) mu += row[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::int64_t c = 0; c < d; ++c) {
      const double h = (row[c] - mu) * is;
      xhat[r * d + c] = h;
      y[r * d + c] = h * gain.values()[c] + bias.values()[c];
    }
  }
  return make_result(std::move(y), x.shape(), {x, gain, bias},
                     [n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       const auto& gv = self.inputs[1]->value;
                       auto gx = self.input_grad(0);
                       auto gg = self.input_grad(1);
                       auto gb = self.input_grad(2);
                       std::vector<double> dh(static_cast<std::size_t>(d));
                       for (std::int64_t r = 0; r < n; ++r) {
                         const double* dy = self.grad.data() + r * d;
                         const double* h = xhat.data() + r * d;
                         double mean_dh = 0.0, mean_dh_h = 0.0;
                         for (std::int64_t c = 0; c < d; ++c) {
                           dh[c] = dy[c] * gv[c];
                           mean_dh += dh[c];
                           mean_dh_h += dh[c] * h[c];
                           if (!gg.empty()) gg[c] += dy[c] * h[c];
                           if (!gb.empty()) gb[c] += dy[c];
                         }
                         mean_dh /= static_cast<double>(d);
                         mean_dh_h /= static_cast<double>(d);
                         if (!gx.empty())
                           for (std::int64_t c = 0; c < d; ++c)
                             gx[r * d + c] += inv_std[r] * (dh[c] - mean_dh - h[c] * mean_dh_h);
                       }
                     });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
  require_rank(q, 2, "attention");
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  const auto n = q.dim(0), d = q.dim(1);
  if (heads <= 0 || d % heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
  const auto dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> probs(static_cast<std::size_t>(heads * n * n));
  std::vector<double> y(static_cast<std::size_t>(n * d), 0.0);
  const auto& qv = q.vector();
  const auto& kv = k.vector();
  const auto& vv = v.vector();
  for (int h = 0; h < heads; ++h) {
    double* p = probs.data() + h * n * n;
    for (std::int64_t i = 0; i < n; ++i) {
      double mx = -1e300;
      for (std::int64_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::int64_t c = 0; c < dh; ++c) s += qv[i * d + h * dh + c] * kv[j * d + h * dh + c];
        s *= inv_sqrt;
        p[i * n + j] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (std::int64_t j = 0; j < n; ++j) z += (p[i * n + j] = std::exp(p[i * n + j] - mx));
      for (std::int64_t j = 0; j < n; ++j) p[i * n + j] /= z;
      for (std::int64_t j = 0; j < n; ++j) {
        const double w = p[i * n + j];
        for (std::int64_t c = 0; c < dh; ++c) y[i * d + h * dh + c] += w * vv[j * d + h * dh + c];
      }
    }
  }
  return make_result(
      std::move(y), {n, d}, {q, k, v}, [n, d, dh, heads, inv_sqrt, probs = std::move(probs)](Node& self) {
        const auto& qv = self.inputs[0]->value;
        const auto& kv = self.inputs[1]->value;
        const auto& vv = self.inputs[2]->value;
        auto gq = self.input_grad(0);
        auto gk = self.input_grad(1);
        auto gv = self.input_grad(2);
        const auto& dy = self.grad;
        std::vector<double> dp(static_cast<std::size_t>(n * n));
        for (int h = 0; h < heads; ++h) {
          const double* p = probs.data() + h * n * n;
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < n; ++j) {
              double s = 0.0;
              for (std::int64_t c = 0; c < dh; ++c) s += dy[i * d + h * dh + c] * vv[j * d + h * dh + c];
              dp[i * n + j] = s;
              if (!gv.empty())
                for (std::int64_t c = 0; c < dh; ++c) gv[j * d + h * dh + c] += p[i * n + j] * dy[i * d + h * dh + c];
            }
          for (std::int64_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::int64_t j = 0; j < n; ++j) dot += dp[i * n + j] * p[i * n + j];
            for (std::int64_t j = 0; j < n; ++j) {
              const double ds = p[i * n + j] * (dp[i * n + j] - dot) * inv_sqrt;
              if (ds == 0.0) continue;
              for (std::int64_t c = 0; c < dh; ++c) {
                if (!gq.empty()) gq[i * d + h * dh + c] += ds * kv[j * d + h * dh + c];
                if (!gk.empty()) gk[j * d + h * dh + c] += ds * qv[i * d + h * dh + c];
              }
            }
          }
        }
      });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const auto d = parts[0].dim(1);
  std::int64_t n = 0;
  std::vector<double> y;
  std::vector<std::int64_t> offsets;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != d) throw std::invalid_argument("concat_rows: width mismatch");
    offsets.push_back(static_cast<std::int64_t>(y.size()));
    y.insert(y.end(), p.values().begin(), p.values().end());
    n += p.dim(0);
  }
  return make_result(std::move(y), {n, d}, parts, [offsets = std::move(offsets)](Node& self) {
    for (std::size_t k = 0; k < offsets.size(); ++k) {
      auto g = self.input_grad(k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[k] + i];
    }
  });
}

Tensor slice_rows(const Tensor& x, std::int64_t begin, std::int64_t end) {
  require_rank(x, 2, "slice_rows");
  if (begin < 0 || end > x.dim(0) || begin > end) throw std::invalid_argument("slice_rows: bad range");
  const auto d = x.dim(1);
  std::vector<double> y(x.values().begin() + begin * d, x.values().begin() + end * d);
  return make_result(std::move(y), {end - begin, d}, {x}, [begin, d](Node& self) {
    auto g = self.input_grad(0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * d + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& x, std::int64_t begin, std::int64_t end) {
  require_rank(x, 2, "slice_cols");
  if (begin < 0 || end > x.dim(1) || begin > end) throw std::invalid_argument("slice_cols: bad range");
  const auto n = x.dim(0), d = x.dim(1), w = end - begin;
  std::vector<double> y(static_cast<std::size_t>(n * w));
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t c = 0; c < w; ++c) y[r * w + c] = x.values()[r * d + begin + c];
  return make_result(std::move(y), {n, w}, {x}, [n, d, w, begin](Node& self) {
    auto g = self.input_grad(0);
    for (std::int64_t r = 0; r < n; ++r)
      for (std::int64_t c = 0; c < w; ++c) g[r * d + begin + c] += self.grad[r * w + c];
  });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const auto h = parts[0].dim(1), w = parts[0].dim(2);
  std::int64_t c = 0;
  std::vector<double> y;
  std::vector<std::int64_t> offsets;
  for (const auto& p : parts) {
    require_rank(p, 3, "concat_channels");
    if (p.dim(1) != h || p.dim(2) != w) throw std::invalid_argument("concat_channels: spatial mismatch");
    offsets.push_back(static_cast<std::int64_t>(y.size()));
    y.insert(y.end(), p.values().begin(), p.values().end());
    c += p.dim(0);
  }
  return make_result(std::move(y), {c, h, w}, parts, [offsets = std::move(offsets)](Node& self) {
    for (std::size_t k = 0; k < offsets.size(); ++k) {
      auto g = self.input_grad(k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[k] + i];
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  require_rank(x, 3, "conv2d");
  require_rank(weight, 4, "conv2d");
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto o = weight.dim(0), ks = weight.dim(2);
  if (weight.dim(1) != c || weight.dim(3) != ks)
    throw std::invalid_argument("conv2d: weight " + shape_string(weight.shape()) + " vs input " +
                                shape_string(x.shape()));
  if (bias.numel() != o) throw std::invalid_argument("conv2d: bias size mismatch");
  const auto ho = (h + 2 * padding - ks) / stride + 1;
  const auto wo = (w + 2 * padding - ks) / stride + 1;
  const auto rows = c * ks * ks, cols = ho * wo;

  // im2col: rows index (channel, ky, kx), cols index output pixel.
  std::vector<double> col(static_cast<std::size_t>(rows * cols), 0.0);
  const auto& xv = x.vector();
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t ky = 0; ky < ks; ++ky)
      for (std::int64_t kx = 0; kx < ks; ++kx) {
        double* dst = col.data() + ((ci * ks + ky) * ks + kx) * cols;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          const auto iy = oy * stride + ky - padding;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            const auto ix = ox * stride + kx - padding;
            if (ix < 0 || ix >= w) continue;
            dst[oy * wo + ox] = xv[(ci * h + iy) * w + ix];
          }
        }
      }
  std::vector<double> y(static_cast<std::size_t>(o * cols));
  MapMat ym(y.data(), o, cols);
  ym.noalias() = ConstMapMat(weight.values().data(), o, rows) * ConstMapMat(col.data(), rows, cols);
  ym.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.values().data(), o);

  return make_result(
      std::move(y), {o, ho, wo}, {x, weight, bias},
      [=, col = std::move(col)](Node& self) {
        ConstMapMat dy(self.grad.data(), o, cols);
        if (auto gw = self.input_grad(1); !gw.empty())
          MapMat(gw.data(), o, rows).noalias() += dy * ConstMapMat(col.data(), rows, cols).transpose();
        // Plain loop, as in linear.
        if (auto gb = self.input_grad(2); !gb.empty())
          for (std::int64_t oc = 0; oc < o; ++oc) {
            const double* row = self.grad.data() + oc * cols;
            double s = 0.0;
            for (std::int64_t j = 0; j < cols; ++j) s += row[j];
            gb[oc] += s;
          }
        if (auto gx = self.input_grad(0); !gx.empty()) {
          RowMat dcol = ConstMapMat(self.inputs[1]->value.data(), o, rows).transpose() * dy;
          for (std::int64_t ci = 0; ci < c; ++ci)
            for (std::int64_t ky = 0; ky < ks; ++ky)
              for (std::int64_t kx = 0; kx < ks; ++kx) {
                const double* src = dcol.data() + ((ci * ks + ky) * ks + kx) * cols;
                for (std::int64_t oy = 0; oy < ho; ++oy) {
                  const auto iy = oy * stride + ky - padding;
                  if (iy < 0 || iy >= h) continue;
                  for (std::int64_t ox = 0; ox < wo; ++ox) {
                    const auto ix = ox * stride + kx - padding;
                    if (ix < 0 || ix >= w) continue;
                    gx[(ci * h + iy) * w + ix] += src[oy * wo + ox];
                  }
                }
              }
        }
      });
}

Tensor upsample_nearest2x(const Tensor& x) {
  require_rank(x, 3, "upsample_nearest2x");
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::vector<double> y(static_cast<std::size_t>(c * 4 * h * w));
  const auto& xv = x.vector();
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t iy = 0; iy < 2 * h; ++iy)
      for (std::int64_t ix = 0; ix < 2 * w; ++ix)
        y[(ci * 2 * h + iy) * 2 * w + ix] = xv[(ci * h + iy / 2) * w + ix / 2];
  return make_result(std::move(y), {c, 2 * h, 2 * w}, {x}, [c, h, w](Node& self) {
    auto g = self.input_grad(0);
    for (std::int64_t ci = 0; ci < c; ++ci)
      for (std::int64_t iy = 0; iy < 2 * h; ++iy)
        for (std::int64_t ix = 0; ix < 2 * w; ++ix)
          g[(ci * h + iy / 2) * w + ix / 2] += self.grad[(ci * 2 * h + iy) * 2 * w + ix];
  });
}

Tensor add_channel_noise(const Tensor& x, const Tensor& scale_per_channel, const Tensor& noise) {
  require_rank(x, 3, "add_channel_noise");
  const auto c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (scale_per_channel.numel() != c || noise.numel() != hw)
    throw std::invalid_argument("add_channel_noise: size mismatch");
  std::vector<double> y(x.vector());
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t p = 0; p < hw; ++p) y[ci * hw + p] += scale_per_channel.values()[ci] * noise.values()[p];
  return make_result(std::move(y), x.shape(), {x, scale_per_channel, noise}, [c, hw](Node& self) {
    const auto& sv = self.inputs[1]->value;
    const auto& nv = self.inputs[2]->value;
    if (auto gx = self.input_grad(0); !gx.empty())
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    auto gs = self.input_grad(1);
    auto gn = self.input_grad(2);
    for (std::int64_t ci = 0; ci < c; ++ci)
      for (std::int64_t p = 0; p < hw; ++p) {
        const double g = self.grad[ci * hw + p];
        if (!gs.empty()) gs[ci] += g * nv[p];
        if (!gn.empty()) gn[p] += g * sv[ci];
      }
  });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 3, "add_channel_bias");
  const auto c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (bias.numel() != c) throw std::invalid_argument("add_channel_bias: size mismatch");
  std::vector<double> y(x.vector());
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t p = 0; p < hw; ++p) y[ci * hw + p] += bias.values()[ci];
  return make_result(std::move(y), x.shape(), {x, bias}, [c, hw](Node& self) {
    if (auto gx = self.input_grad(0); !gx.empty())
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    if (auto gb = self.input_grad(1); !gb.empty())
      for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t p = 0; p < hw; ++p) gb[ci] += self.grad[ci * hw + p];
  });
}

Tensor hwc_to_chw(const Tensor& x, std::int64_t height, std::int64_t width) {
  if (x.numel() != height * width * 3) throw std::invalid_argument("hwc_to_chw: size mismatch");
  const auto hw = height * width;
  std::vector<double> y(static_cast<std::size_t>(3 * hw));
  for (std::int64_t p = 0; p < hw; ++p)
    for (int ch = 0; ch < 3; ++ch) y[ch * hw + p] = x.values()[p * 3 + ch];
  return make_result(std::move(y), {3, height, width}, {x}, [hw](Node& self) {
    auto g = self.input_grad(0);
    for (std::int64_t p = 0; p < hw; ++p)
      for (int ch = 0; ch < 3; ++ch) g[p * 3 + ch] += self.grad[ch * hw + p];
  });
}

Tensor chw_to_hwc(const Tensor& x) {
  require_rank(x, 3, "chw_to_hwc");
  if (x.dim(0) != 3) throw std::invalid_argument("chw_to_hwc: expected 3 channels");
  const auto hw = x.dim(1) * x.dim(2);
  std::vector<double> y(static_cast<std::size_t>(3 * hw));
  for (std::int64_t p = 0; p < hw; ++p)
    for (int ch = 0; ch < 3; ++ch) y[p * 3 + ch] = x.values()[ch * hw + p];
  return make_result(std::move(y), {hw, 3}, {x}, [hw](Node& self) {
    auto g = self.input_grad(0);
    for (std::int64_t p = 0; p < hw; ++p)
      for (int ch = 0; ch < 3; ++ch) g[ch * hw + p] += self.grad[p * 3 + ch];
  });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw std::invalid_argument("mse: size mismatch");
  const auto& av = a.vector();
  const auto& bv = b.vector();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  const double inv_n = 1.0 / static_cast<double>(av.size());
  return make_result({s * inv_n}, {1}, {a, b}, [inv_n](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    const double g0 = 2.0 * inv_n * self.grad[0];
    if (auto ga = self.input_grad(0); !ga.empty())
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g0 * (av[i] - bv[i]);
    if (auto gb = self.input_grad(1); !gb.empty())
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g0 * (av[i] - bv[i]);
  });
}

Tensor dot_constant(const Tensor& a, std::span<const double> g) {
  if (static_cast<std::int64_t>(g.size()) != a.numel()) throw std::invalid_argument("dot_constant: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) s += a.values()[i] * g[i];
  return make_result({s}, {1}, {a}, [gc = std::vector<double>(g.begin(), g.end())](Node& self) {
    auto ga = self.input_grad(0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[0] * gc[i];
  });
}

}  // namespace posefree::ad
