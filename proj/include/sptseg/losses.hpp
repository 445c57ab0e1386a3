#pragma once

#include <cstddef>
#include <span>

#include "sptseg/tensor.hpp"

namespace sptseg {

struct LossConfig {
  double focal_weight = 1.0;  // gamma
  double ssim_weight = 1.0;   // sigma
  double focal_gamma = 2.0;   // focusing exponent
  std::size_t ssim_window = 7;
  double ssim_c1 = 1e-4;
  double ssim_c2 = 9e-4;

  void validate() const;
};

/// Label value excluded from the loss (unseen-class or unlabeled pixels).
inline constexpr int kIgnoreLabel = -1;

/// Mean over non-ignored pixels of -(1 - p_t)^gamma * log(p_t), with p_t
/// clamped to [1e-12, 1]. probs is [C x P]; target holds P row indices.
Tensor focal_loss(const Tensor& probs, std::span<const int> target, double gamma);

/// k x k uniform-window local mean over the trailing two axes, valid
/// positions only: [C x H x W] -> [C x (H-k+1) x (W-k+1)].
Tensor box_mean(const Tensor& x, std::size_t k);

/// 1 - mean single-scale SSIM between two [C x H x W] fields.
Tensor ssim_loss(const Tensor& a, const Tensor& b, const LossConfig& cfg);

/// One-hot [C x H x W] from row indices; ignored pixels are all-zero.
Tensor one_hot(std::span<const int> target, std::size_t classes, std::size_t height, std::size_t width);

/// Bilinear (half-pixel centres, edge clamped) upsampling of per-patch values
/// [C x G*G] to [C x S*S], S = G * factor.
Tensor upsample_bilinear(const Tensor& x, std::size_t grid, std::size_t factor);

struct LossTerms {
  Tensor focal;
  Tensor ssim;
  Tensor total;
};

/// gamma * focal + sigma * ssim on pixel probabilities [C x H*W].
LossTerms total_loss(const Tensor& probs, std::span<const int> target, std::size_t height,
                     std::size_t width, const LossConfig& cfg);

}  // namespace sptseg
