#pragma once

#include <complex>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "sptseg/tensor.hpp"

namespace sptseg {

/// Complex array with split real/imaginary storage, row-major.
struct ComplexTensor {
  Shape shape;
  std::vector<double> re;
  std::vector<double> im;

  ComplexTensor() = default;
  explicit ComplexTensor(Shape s);
  std::size_t size() const { return re.size(); }
};

/// Output of fft2: per-channel spectrum laid out as (G, G, D).
using FrequencyMap = ComplexTensor;

/// 1D DFT in place, unnormalized in both directions (e^{-i} forward,
/// e^{+i} inverse). Radix-2 when the length is a power of two, direct
/// summation otherwise.
void dft1d(std::span<std::complex<double>> data, bool inverse);

/// Per-channel 2D DFT of a (G, G, D) grid, unnormalized forward convention.
FrequencyMap fft2(const Tensor& x);
FrequencyMap fft2(const ComplexTensor& x);

/// Inverse 2D DFT with 1/G^2 normalization. Returns the real part; the largest
/// absolute imaginary component is written to `imag_residue` when given.
Tensor ifft2(const FrequencyMap& f, double* imag_residue = nullptr);
ComplexTensor ifft2_complex(const FrequencyMap& f);

/// Learnable complex filter over a G x G token grid with D channels.
struct SpectralFilter {
  Tensor re;  // (G, G, D)
  Tensor im;  // (G, G, D)

  std::size_t grid() const { return re.extent(0); }
  std::size_t channels() const { return re.extent(2); }

  /// re = 1 + noise, im = noise, noise ~ N(0, sigma^2).
  static SpectralFilter identity(std::size_t grid, std::size_t channels, double sigma,
                                 std::mt19937_64& rng);
  static SpectralFilter constant(std::size_t grid, std::size_t channels, double re, double im);
};

/// Differentiable real(IFFT(FFT(x) * w)) for x of shape (G, G, D) or (N, D)
/// with N = G^2; the result has x's shape.
Tensor spectral_filter(const Tensor& x, const SpectralFilter& w);

/// Spectral prompt of patch tokens: filters H * g (g broadcast over tokens).
/// H is (N, D); returns (N, D).
Tensor spectral_prompt(const Tensor& H, const Tensor& g, const SpectralFilter& w);

/// Side of the square token grid for N tokens; DimensionError if N is not a
/// perfect square.
std::size_t grid_side(std::size_t tokens);

}  // namespace sptseg
