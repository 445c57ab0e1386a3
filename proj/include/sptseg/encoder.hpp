#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sptseg/spectral.hpp"
#include "sptseg/tensor.hpp"

namespace sptseg {

struct EncoderConfig {
  std::size_t layers = 4;
  std::size_t width = 32;
  std::size_t heads = 4;
  std::size_t patch = 4;
  std::size_t image_side = 48;
  std::size_t prompt_length = 4;
  std::size_t mlp_ratio = 4;
  // Inclusive 1-based layer interval that receives spectral prompts.
  // spt_first == 0 disables spectral prompting.
  std::size_t spt_first = 1;
  std::size_t spt_last = 2;

  std::size_t grid() const { return image_side / patch; }
  std::size_t tokens() const { return grid() * grid(); }
  bool spt_enabled() const { return spt_first != 0; }
  bool spt_at(std::size_t layer) const {
    return spt_enabled() && layer >= spt_first && layer <= spt_last;
  }
  void validate() const;
};

/// One encoder layer's state: cls token g, prompts V and patch tokens H.
struct TokenSequence {
  Tensor g;  // [D]
  Tensor V;  // [M x D]
  Tensor H;  // [N x D]
};

struct BackboneLayer {
  Tensor ln1_gamma, ln1_beta;
  Tensor w_qkv, b_qkv;  // [D x 3D], [3D]
  Tensor w_out, b_out;  // [D x D], [D]
  Tensor ln2_gamma, ln2_beta;
  Tensor w_fc1, b_fc1;  // [D x rD], [rD]
  Tensor w_fc2, b_fc2;  // [rD x D], [D]
};

/// Randomly initialized then frozen transformer; no tensor here requires a
/// gradient.
struct FrozenBackbone {
  Tensor patch_weight;  // [p*p*3 x D]
  Tensor patch_bias;    // [D]
  Tensor cls;           // [D]
  Tensor position;      // [N x D], fixed sinusoidal
  std::vector<BackboneLayer> layers;
  Tensor final_gamma, final_beta;

  static FrozenBackbone init(const EncoderConfig& cfg, std::mt19937_64& rng);

  void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  void for_each_mut(const std::function<void(const std::string&, Tensor&)>& fn);
};

/// Trainable encoder-side parameters: one prompt block per layer and one
/// spectral filter per layer in the SPT range.
struct PromptParams {
  std::vector<Tensor> prompts;                       // L x [M x D]
  std::vector<std::optional<SpectralFilter>> filters;  // L entries, set iff layer in range

  static PromptParams init(const EncoderConfig& cfg, std::mt19937_64& rng);

  void for_each_mut(const std::function<void(const std::string&, Tensor&)>& fn);
};

/// Fixed 1D sinusoidal encoding over token index.
Tensor sinusoidal_positions(std::size_t tokens, std::size_t width);

/// Flattens an (S, S, 3) image in [0, 1] into patches and projects them.
/// V is taken from the first layer's prompts.
TokenSequence patch_embed(std::span<const double> image, const EncoderConfig& cfg,
                          const FrozenBackbone& backbone, const PromptParams& prompts);

/// Layer `layer` (1-based) of the prompted encoder. With a filter, the block
/// sees [g, V, H + spectral_prompt(H, g, w)]; without, [g, V, H]. The returned
/// V is the block's prompt-slot output, which callers discard.
TokenSequence encoder_layer(std::size_t layer, const TokenSequence& in, const EncoderConfig& cfg,
                            const BackboneLayer& weights, const SpectralFilter* spt);

struct Encoded {
  Tensor g;  // [D]
  Tensor H;  // [N x D]
};

Encoded encode(std::span<const double> image, const EncoderConfig& cfg,
               const FrozenBackbone& backbone, const PromptParams& prompts);

}  // namespace sptseg
