#include "sptseg/spectral.hpp"

#include <cmath>
#include <numbers>

#include "blas.hpp"
#include "sptseg/errors.hpp"

namespace sptseg {

ComplexTensor::ComplexTensor(Shape s)
    : shape(std::move(s)), re(shape_numel(shape), 0.0), im(shape_numel(shape), 0.0) {}

std::size_t grid_side(std::size_t tokens) {
  auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(tokens))));
  if (g * g != tokens) {
    throw DimensionError("token count " + std::to_string(tokens) + " is not a perfect square");
  }
  return g;
}

namespace {

bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

void fft_radix2(std::span<std::complex<double>> a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w(std::cos(ang * static_cast<double>(k)),
                                     std::sin(ang * static_cast<double>(k)));
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

void dft_direct(std::span<std::complex<double>> a, bool inverse) {
  const std::size_t n = a.size();
  std::vector<std::complex<double>> out(n);
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      // Reduce k*j mod n so the twiddle angle stays in [0, 2pi).
      const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>((k * j) % n) /
                         static_cast<double>(n);
      acc += a[j] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  std::copy(out.begin(), out.end(), a.begin());
}

// Complex product C = F * X where F is the g x g twiddle matrix and X holds
// `cols` complex columns. Four real gemms.
void twiddle_product(const std::vector<double>& fr, const std::vector<double>& fi, std::size_t g,
                     std::size_t cols, const double* xr, const double* xi, double* cr, double* ci) {
  blas::gemm(false, false, g, cols, g, 1.0, fr.data(), g, xr, cols, 0.0, cr, cols);
  blas::gemm(false, false, g, cols, g, -1.0, fi.data(), g, xi, cols, 1.0, cr, cols);
  blas::gemm(false, false, g, cols, g, 1.0, fr.data(), g, xi, cols, 0.0, ci, cols);
  blas::gemm(false, false, g, cols, g, 1.0, fi.data(), g, xr, cols, 1.0, ci, cols);
}

// Transforms each channel of a (G, G, D) complex grid in place. Both passes
// are dense twiddle-matrix products, so every channel is handled at once.
void transform2d(ComplexTensor& x, bool inverse) {
  if (x.shape.size() != 3 || x.shape[0] != x.shape[1]) {
    throw DimensionError("2D transform needs a square (G, G, D) grid, got " + shape_str(x.shape));
  }
  const std::size_t g = x.shape[0], d = x.shape[2];
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<double> fr(g * g), fi(g * g);
  for (std::size_t k = 0; k < g; ++k) {
    for (std::size_t j = 0; j < g; ++j) {
      const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>((k * j) % g) / static_cast<double>(g);
      fr[k * g + j] = std::cos(ang);
      fi[k * g + j] = std::sin(ang);
    }
  }
  std::vector<double> yr(x.re.size()), yi(x.im.size());
  // along the second grid axis: each grid row is a (G, D) block
  for (std::size_t r = 0; r < g; ++r) {
    const std::size_t off = r * g * d;
    twiddle_product(fr, fi, g, d, x.re.data() + off, x.im.data() + off, yr.data() + off, yi.data() + off);
  }
  // along the first grid axis: the whole grid viewed as (G, G*D)
  twiddle_product(fr, fi, g, g * d, yr.data(), yi.data(), x.re.data(), x.im.data());
}

ComplexTensor from_real(std::span<const double> values, Shape shape) {
  ComplexTensor c(std::move(shape));
  std::copy(values.begin(), values.end(), c.re.begin());
  return c;
}

Shape grid_shape_of(const Tensor& x) {
  if (x.rank() == 3) {
    if (x.extent(0) != x.extent(1)) {
      throw DimensionError("spectral ops need a square grid, got " + shape_str(x.shape()));
    }
    return x.shape();
  }
  if (x.rank() == 2) {
    const std::size_t g = grid_side(x.extent(0));
    return {g, g, x.extent(1)};
  }
  throw DimensionError("spectral ops need (G, G, D) or (N, D), got " + shape_str(x.shape()));
}

}  // namespace

void dft1d(std::span<std::complex<double>> data, bool inverse) {
  if (data.size() <= 1) return;
  if (is_pow2(data.size())) {
    fft_radix2(data, inverse);
  } else {
    dft_direct(data, inverse);
  }
}

FrequencyMap fft2(const ComplexTensor& x) {
  ComplexTensor out = x;
  transform2d(out, false);
  return out;
}

FrequencyMap fft2(const Tensor& x) {
  if (x.rank() != 3 || x.extent(0) != x.extent(1)) {
    throw DimensionError("fft2 needs a square (G, G, D) grid, got " + shape_str(x.shape()));
  }
  return fft2(from_real(x.data(), x.shape()));
}

ComplexTensor ifft2_complex(const FrequencyMap& f) {
  if (f.re.size() != f.im.size()) throw DimensionError("ifft2: real/imaginary size mismatch");
  ComplexTensor out = f;
  transform2d(out, true);
  const double norm = 1.0 / static_cast<double>(f.shape[0] * f.shape[1]);
  for (auto& v : out.re) v *= norm;
  for (auto& v : out.im) v *= norm;
  return out;
}

Tensor ifft2(const FrequencyMap& f, double* imag_residue) {
  ComplexTensor c = ifft2_complex(f);
  if (imag_residue) {
    double worst = 0.0;
    for (double v : c.im) worst = std::max(worst, std::abs(v));
    *imag_residue = worst;
  }
  return Tensor(c.shape, std::move(c.re));
}

SpectralFilter SpectralFilter::identity(std::size_t grid, std::size_t channels, double sigma,
                                        std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, sigma);
  const std::size_t n = grid * grid * channels;
  std::vector<double> re(n), im(n);
  for (std::size_t i = 0; i < n; ++i) {
    re[i] = 1.0 + noise(rng);
    im[i] = noise(rng);
  }
  return {Tensor({grid, grid, channels}, std::move(re), true),
          Tensor({grid, grid, channels}, std::move(im), true)};
}

SpectralFilter SpectralFilter::constant(std::size_t grid, std::size_t channels, double re, double im) {
  return {Tensor::full({grid, grid, channels}, re, true), Tensor::full({grid, grid, channels}, im, true)};
}

Tensor spectral_filter(const Tensor& x, const SpectralFilter& w) {
  const Shape grid = grid_shape_of(x);
  if (w.re.shape() != grid || w.im.shape() != grid) {
    throw DimensionError("spectral_filter: filter " + shape_str(w.re.shape()) +
                         " does not match grid " + shape_str(grid));
  }
  FrequencyMap spec = fft2(from_real(x.data(), grid));
  auto Wr = w.re.data();
  auto Wi = w.im.data();
  ComplexTensor prod(grid);
  for (std::size_t i = 0; i < spec.size(); ++i) {
    prod.re[i] = spec.re[i] * Wr[i] - spec.im[i] * Wi[i];
    prod.im[i] = spec.re[i] * Wi[i] + spec.im[i] * Wr[i];
  }
  ComplexTensor spatial = ifft2_complex(prod);

  return make_op_result(
      "spectral_filter", x.shape(), std::move(spatial.re), {x, w.re, w.im},
      [w, grid, spec = std::move(spec)](OpContext& ctx) {
        const double cells = static_cast<double>(grid[0] * grid[1]);
        // Gradient w.r.t. the filtered spectrum: FFT(dS) / G^2.
        ComplexTensor gy = fft2(from_real(ctx.grad_out, grid));
        for (auto& v : gy.re) v /= cells;
        for (auto& v : gy.im) v /= cells;
        auto Wr = w.re.data();
        auto Wi = w.im.data();
        if (!ctx.grad_in[1].empty() || !ctx.grad_in[2].empty()) {
          for (std::size_t i = 0; i < gy.size(); ++i) {
            // gy * conj(spec)
            if (!ctx.grad_in[1].empty()) ctx.grad_in[1][i] += gy.re[i] * spec.re[i] + gy.im[i] * spec.im[i];
            if (!ctx.grad_in[2].empty()) ctx.grad_in[2][i] += gy.im[i] * spec.re[i] - gy.re[i] * spec.im[i];
          }
        }
        if (!ctx.grad_in[0].empty()) {
          // gy * conj(w), then back through the forward transform.
          ComplexTensor gf(grid);
          for (std::size_t i = 0; i < gy.size(); ++i) {
            gf.re[i] = gy.re[i] * Wr[i] + gy.im[i] * Wi[i];
            gf.im[i] = gy.im[i] * Wr[i] - gy.re[i] * Wi[i];
          }
          ComplexTensor back = ifft2_complex(gf);
          for (std::size_t i = 0; i < back.size(); ++i) ctx.grad_in[0][i] += back.re[i] * cells;
        }
      });
}

Tensor spectral_prompt(const Tensor& H, const Tensor& g, const SpectralFilter& w) {
  if (H.rank() != 2) throw DimensionError("spectral_prompt: H must be (N, D), got " + shape_str(H.shape()));
  if (g.shape() != Shape{H.extent(1)}) {
    throw DimensionError("spectral_prompt: g " + shape_str(g.shape()) + " vs H " + shape_str(H.shape()));
  }
  grid_side(H.extent(0));
  return spectral_filter(mul(H, g), w);
}

}  // namespace sptseg
