#include "sptseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "sptseg/errors.hpp"

namespace sptseg {

void LossConfig::validate() const {
  if (focal_weight < 0.0 || ssim_weight < 0.0) throw ConfigError("loss: weights must be non-negative");
  if (focal_gamma < 0.0) throw ConfigError("loss: focal_gamma must be non-negative");
  if (ssim_window == 0 || ssim_window % 2 == 0) throw ConfigError("loss: ssim_window must be odd");
  if (ssim_c1 <= 0.0 || ssim_c2 <= 0.0) throw ConfigError("loss: ssim stabilizers must be positive");
}

namespace {
constexpr double kMinProb = 1e-12;
}

Tensor focal_loss(const Tensor& probs, std::span<const int> target, double gamma) {
  if (probs.rank() != 2 || probs.extent(1) != target.size()) {
    throw DimensionError("focal_loss: probs " + shape_str(probs.shape()) + " vs " +
                         std::to_string(target.size()) + " target pixels");
  }
  const std::size_t classes = probs.extent(0), pixels = probs.extent(1);
  auto P = probs.data();
  std::size_t labeled = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < pixels; ++i) {
    const int t = target[i];
    if (t == kIgnoreLabel) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= classes) {
      throw ContractError("focal_loss: label " + std::to_string(t) + " outside [0," + std::to_string(classes) + ")");
    }
    const double p = std::clamp(P[static_cast<std::size_t>(t) * pixels + i], kMinProb, 1.0);
    total += -std::pow(1.0 - p, gamma) * std::log(p);
    ++labeled;
  }
  const double value = labeled ? total / static_cast<double>(labeled) : 0.0;
  std::vector<int> tgt(target.begin(), target.end());
  return make_op_result("focal_loss", {1}, {value}, {probs},
                        [probs, tgt = std::move(tgt), gamma, pixels, labeled](OpContext& ctx) {
                          if (!labeled) return;
                          auto P = probs.data();
                          const double scale = ctx.grad_out[0] / static_cast<double>(labeled);
                          for (std::size_t i = 0; i < pixels; ++i) {
                            const int t = tgt[i];
                            if (t == kIgnoreLabel) continue;
                            const std::size_t idx = static_cast<std::size_t>(t) * pixels + i;
                            const double p = P[idx];
                            if (p < kMinProb || p > 1.0) continue;  // clamped: flat
                            const double q = 1.0 - p;
                            double d = -std::pow(q, gamma) / p;
                            if (q > 0.0 && gamma != 0.0) d += gamma * std::pow(q, gamma - 1.0) * std::log(p);
                            ctx.grad_in[0][idx] += scale * d;
                          }
                        });
}

Tensor box_mean(const Tensor& x, std::size_t k) {
  if (x.rank() != 3) throw DimensionError("box_mean needs [C x H x W], got " + shape_str(x.shape()));
  const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  if (k == 0 || k > h || k > w) {
    throw DimensionError("box_mean: window " + std::to_string(k) + " larger than " + shape_str(x.shape()));
  }
  const std::size_t oh = h - k + 1, ow = w - k + 1;
  const double norm = 1.0 / static_cast<double>(k * k);
  auto X = x.data();
  std::vector<double> tmp(c * h * ow, 0.0), out(c * oh * ow, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      const double* src = X.data() + (ch * h + y) * w;
      double* dst = tmp.data() + (ch * h + y) * ow;
      for (std::size_t xo = 0; xo < ow; ++xo) {
        double s = 0.0;
        for (std::size_t d = 0; d < k; ++d) s += src[xo + d];
        dst[xo] = s;
      }
    }
    for (std::size_t yo = 0; yo < oh; ++yo) {
      double* dst = out.data() + (ch * oh + yo) * ow;
      for (std::size_t d = 0; d < k; ++d) {
        const double* src = tmp.data() + (ch * h + yo + d) * ow;
        for (std::size_t xo = 0; xo < ow; ++xo) dst[xo] += src[xo];
      }
      for (std::size_t xo = 0; xo < ow; ++xo) dst[xo] *= norm;
    }
  }
  return make_op_result("box_mean", {c, oh, ow}, std::move(out), {x}, [c, h, w, k, oh, ow, norm](OpContext& ctx) {
    std::vector<double> gtmp(c * h * ow, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t yo = 0; yo < oh; ++yo) {
        const double* g = ctx.grad_out.data() + (ch * oh + yo) * ow;
        for (std::size_t d = 0; d < k; ++d) {
          double* dst = gtmp.data() + (ch * h + yo + d) * ow;
          for (std::size_t xo = 0; xo < ow; ++xo) dst[xo] += g[xo] * norm;
        }
      }
      for (std::size_t y = 0; y < h; ++y) {
        const double* g = gtmp.data() + (ch * h + y) * ow;
        double* dst = ctx.grad_in[0].data() + (ch * h + y) * w;
        for (std::size_t xo = 0; xo < ow; ++xo)
          for (std::size_t d = 0; d < k; ++d) dst[xo + d] += g[xo];
      }
    }
  });
}

Tensor ssim_loss(const Tensor& a, const Tensor& b, const LossConfig& cfg) {
  if (a.shape() != b.shape() || a.rank() != 3) {
    throw DimensionError("ssim_loss: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t k = cfg.ssim_window;
  Tensor mu_a = box_mean(a, k);
  Tensor mu_b = box_mean(b, k);
  Tensor mu_ab = mul(mu_a, mu_b);
  Tensor mu_aa = square(mu_a);
  Tensor mu_bb = square(mu_b);
  Tensor var_a = sub(box_mean(square(a), k), mu_aa);
  Tensor var_b = sub(box_mean(square(b), k), mu_bb);
  Tensor cov = sub(box_mean(mul(a, b), k), mu_ab);

  Tensor num = mul(add(mul(mu_ab, 2.0), cfg.ssim_c1), add(mul(cov, 2.0), cfg.ssim_c2));
  Tensor den = mul(add(add(mu_aa, mu_bb), cfg.ssim_c1), add(add(var_a, var_b), cfg.ssim_c2));
  return add(neg(mean(div(num, den))), 1.0);
}

Tensor one_hot(std::span<const int> target, std::size_t classes, std::size_t height, std::size_t width) {
  if (target.size() != height * width) {
    throw DimensionError("one_hot: " + std::to_string(target.size()) + " labels for " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
  std::vector<double> v(classes * height * width, 0.0);
  for (std::size_t i = 0; i < target.size(); ++i) {
    const int t = target[i];
    if (t == kIgnoreLabel) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= classes) {
      throw ContractError("one_hot: label " + std::to_string(t) + " outside [0," + std::to_string(classes) + ")");
    }
    v[static_cast<std::size_t>(t) * target.size() + i] = 1.0;
  }
  return Tensor({classes, height, width}, std::move(v));
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<Tap> bilinear_taps(std::size_t grid, std::size_t factor) {
  std::vector<Tap> taps(grid * factor);
  for (std::size_t o = 0; o < taps.size(); ++o) {
    double s = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(grid - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(s));
    const std::size_t i1 = std::min(i0 + 1, grid - 1);
    taps[o] = {i0, i1, s - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, std::size_t grid, std::size_t factor) {
  if (x.rank() != 2 || x.extent(1) != grid * grid || factor == 0) {
    throw DimensionError("upsample_bilinear: " + shape_str(x.shape()) + " vs grid " + std::to_string(grid));
  }
  const std::size_t c = x.extent(0), side = grid * factor, n = grid * grid;
  auto taps = bilinear_taps(grid, factor);
  auto X = x.data();
  std::vector<double> out(c * side * side);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = X.data() + ch * n;
    for (std::size_t y = 0; y < side; ++y) {
      const Tap& ty = taps[y];
      for (std::size_t xx = 0; xx < side; ++xx) {
        const Tap& tx = taps[xx];
        const double top = src[ty.i0 * grid + tx.i0] * (1.0 - tx.w1) + src[ty.i0 * grid + tx.i1] * tx.w1;
        const double bot = src[ty.i1 * grid + tx.i0] * (1.0 - tx.w1) + src[ty.i1 * grid + tx.i1] * tx.w1;
        out[(ch * side + y) * side + xx] = top * (1.0 - ty.w1) + bot * ty.w1;
      }
    }
  }
  return make_op_result("upsample_bilinear", {c, side * side}, std::move(out), {x},
                        [c, grid, side, n, taps = std::move(taps)](OpContext& ctx) {
                          for (std::size_t ch = 0; ch < c; ++ch) {
                            double* dst = ctx.grad_in[0].data() + ch * n;
                            for (std::size_t y = 0; y < side; ++y) {
                              const Tap& ty = taps[y];
                              for (std::size_t xx = 0; xx < side; ++xx) {
                                const Tap& tx = taps[xx];
                                const double g = ctx.grad_out[(ch * side + y) * side + xx];
                                const double gt = g * (1.0 - ty.w1), gb = g * ty.w1;
                                dst[ty.i0 * grid + tx.i0] += gt * (1.0 - tx.w1);
                                dst[ty.i0 * grid + tx.i1] += gt * tx.w1;
                                dst[ty.i1 * grid + tx.i0] += gb * (1.0 - tx.w1);
                                dst[ty.i1 * grid + tx.i1] += gb * tx.w1;
                              }
                            }
                          }
                        });
}

LossTerms total_loss(const Tensor& probs, std::span<const int> target, std::size_t height, std::size_t width,
                     const LossConfig& cfg) {
  if (probs.rank() != 2 || probs.extent(1) != height * width) {
    throw DimensionError("total_loss: probs " + shape_str(probs.shape()) + " vs " + std::to_string(height) +
                         "x" + std::to_string(width));
  }
  const std::size_t classes = probs.extent(0);
  LossTerms terms;
  terms.focal = focal_loss(probs, target, cfg.focal_gamma);
  terms.ssim = ssim_loss(reshape(probs, {classes, height, width}), one_hot(target, classes, height, width), cfg);
  terms.total = add(mul(terms.focal, cfg.focal_weight), mul(terms.ssim, cfg.ssim_weight));
  return terms;
}

}  // namespace sptseg
