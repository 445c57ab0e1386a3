#include "sptseg/nn.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "blas.hpp"
#include "sptseg/errors.hpp"

namespace sptseg {

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() != 2) throw DimensionError("layer_norm needs rank 2, got " + shape_str(x.shape()));
  const std::size_t n = x.extent(0), d = x.extent(1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: affine shape " + shape_str(gamma.shape()) + " vs width " +
                         std::to_string(d));
  }
  auto X = x.data();
  auto Gm = gamma.data();
  auto Bt = beta.data();
  std::vector<double> out(n * d), xhat(n * d), inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = X.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += r[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (r[j] - mu) * (r[j] - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (r[j] - mu) * inv_std[i];
      xhat[i * d + j] = h;
      out[i * d + j] = h * Gm[j] + Bt[j];
    }
  }
  return make_op_result(
      "layer_norm", {n, d}, std::move(out), {x, gamma, beta},
      [gamma, n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](OpContext& ctx) {
        auto G = ctx.grad_out;
        auto Gm = gamma.data();
        auto& gx = ctx.grad_in[0];
        auto& gg = ctx.grad_in[1];
        auto& gb = ctx.grad_in[2];
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t i = 0; i < n; ++i) {
          const double* g = G.data() + i * d;
          const double* h = xhat.data() + i * d;
          if (!gg.empty())
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[j] * h[j];
          if (!gb.empty())
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[j];
          if (gx.empty()) continue;
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[j] * Gm[j];
            s1 += dh;
            s2 += dh * h[j];
          }
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[j] * Gm[j];
            gx[i * d + j] += inv_std[i] * (dh - inv_d * s1 - h[j] * inv_d * s2);
          }
        }
      });
}

Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  auto X = x.data();
  std::vector<double> out(X.size());
  for (std::size_t i = 0; i < X.size(); ++i) {
    const double v = X[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  return make_op_result("gelu", x.shape(), std::move(out), {x}, [x](OpContext& ctx) {
    auto X = x.data();
    for (std::size_t i = 0; i < X.size(); ++i) {
      const double v = X[i];
      const double u = kC * (v + kA * v * v * v);
      const double t = std::tanh(u);
      const double du = kC * (1.0 + 3.0 * kA * v * v);
      const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      ctx.grad_in[0][i] += ctx.grad_out[i] * d;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add(matmul(x, weight), bias);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 std::size_t q_block, std::size_t kv_block) {
  if (q.rank() != 2 || k.rank() != 2 || v.shape() != k.shape() || q.extent(1) != k.extent(1)) {
    throw DimensionError("attention: incompatible q " + shape_str(q.shape()) + ", k " +
                         shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  const std::size_t nq = q.extent(0), nk = k.extent(0), dm = q.extent(1);
  if (heads == 0 || dm % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(dm) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (q_block == 0 || kv_block == 0 || nq % q_block != 0 || nk % kv_block != 0 ||
      nq / q_block != nk / kv_block) {
    throw DimensionError("attention: block sizes do not tile the token axes");
  }
  const std::size_t dh = dm / heads, blocks = nq / q_block;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  auto Q = q.data();
  auto K = k.data();
  auto V = v.data();

  // probs layout: [block][head][i in q_block][j in kv_block]
  std::vector<double> probs(blocks * heads * q_block * kv_block);
  std::vector<double> out(nq * dm, 0.0);
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      double* P = probs.data() + ((b * heads + h) * q_block) * kv_block;
      const double* qb = Q.data() + b * q_block * dm + h * dh;
      const double* kb = K.data() + b * kv_block * dm + h * dh;
      const double* vb = V.data() + b * kv_block * dm + h * dh;
      blas::gemm(false, true, q_block, kv_block, dh, scale, qb, dm, kb, dm, 0.0, P, kv_block);
      for (std::size_t i = 0; i < q_block; ++i) {
        double* pr = P + i * kv_block;
        const double mx = *std::max_element(pr, pr + kv_block);
        double z = 0.0;
        for (std::size_t j = 0; j < kv_block; ++j) {
          pr[j] = std::exp(pr[j] - mx);
          z += pr[j];
        }
        const double inv = 1.0 / z;
        for (std::size_t j = 0; j < kv_block; ++j) pr[j] *= inv;
      }
      blas::gemm(false, false, q_block, dh, kv_block, 1.0, P, kv_block, vb, dm, 0.0,
                 out.data() + b * q_block * dm + h * dh, dm);
    }
  }

  return make_op_result(
      "attention", {nq, dm}, std::move(out), {q, k, v},
      [q, k, v, heads, dh, dm, blocks, q_block, kv_block, scale,
       probs = std::move(probs)](OpContext& ctx) {
        auto Q = q.data();
        auto K = k.data();
        auto V = v.data();
        const double* G = ctx.grad_out.data();
        auto& gq = ctx.grad_in[0];
        auto& gk = ctx.grad_in[1];
        auto& gv = ctx.grad_in[2];
        std::vector<double> dS(q_block * kv_block);
        for (std::size_t b = 0; b < blocks; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const double* P = probs.data() + ((b * heads + h) * q_block) * kv_block;
            const std::size_t qoff = b * q_block * dm + h * dh;
            const std::size_t koff = b * kv_block * dm + h * dh;
            if (!gv.empty()) {
              blas::gemm(true, false, kv_block, dh, q_block, 1.0, P, kv_block, G + qoff, dm, 1.0,
                         gv.data() + koff, dm);
            }
            if (gq.empty() && gk.empty()) continue;
            // dP = G V^T, then the softmax Jacobian row by row
            blas::gemm(false, true, q_block, kv_block, dh, 1.0, G + qoff, dm, V.data() + koff, dm, 0.0,
                       dS.data(), kv_block);
            for (std::size_t i = 0; i < q_block; ++i) {
              const double* pr = P + i * kv_block;
              double* ds = dS.data() + i * kv_block;
              double dot = 0.0;
              for (std::size_t j = 0; j < kv_block; ++j) dot += ds[j] * pr[j];
              for (std::size_t j = 0; j < kv_block; ++j) ds[j] = pr[j] * (ds[j] - dot) * scale;
            }
            if (!gq.empty()) {
              blas::gemm(false, false, q_block, dh, kv_block, 1.0, dS.data(), kv_block, K.data() + koff, dm, 1.0,
                         gq.data() + qoff, dm);
            }
            if (!gk.empty()) {
              blas::gemm(true, false, kv_block, dh, q_block, 1.0, dS.data(), kv_block, Q.data() + qoff, dm, 1.0,
                         gk.data() + koff, dm);
            }
          }
        }
      });
}

}  // namespace sptseg
