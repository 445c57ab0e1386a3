#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sptseg/tensor.hpp"

namespace sptseg {

struct HiLoConfig {
  std::size_t heads = 4;
  double alpha = 0.5;  // fraction of heads in the windowed (high-frequency) branch
  std::size_t window = 3;
  std::size_t layers = 3;
  std::size_t mlp_ratio = 2;
  // false replaces every decode layer by a plain global MSA block without
  // frequency selection (the "no spectral-guided decoder" ablation).
  bool spectral_guided = true;

  std::size_t high_heads() const;
  std::size_t low_heads() const { return heads - high_heads(); }
  void validate(std::size_t width, std::size_t grid) const;
};

/// Weights of one HiLo attention block. Branch tensors are undefined when the
/// branch owns no heads.
struct HiLoWeights {
  Tensor w_qkv_high, b_qkv_high;  // [D x 3*Hh*dh]
  Tensor w_q_low, b_q_low;        // [D x Hl*dh]
  Tensor w_kv_low, b_kv_low;      // [D x 2*Hl*dh]
  Tensor w_out, b_out;            // [D x D]
};

/// Task-specific gate of the frequency-guided token selection.
struct FreqSelectParams {
  Tensor xi;  // [D]
  Tensor P;   // [D x D]
};

struct DescriptorParams {
  Tensor weight;  // [2D x D]
  Tensor bias;    // [D]
};

struct DecodeLayerParams {
  Tensor ln1_gamma, ln1_beta;
  HiLoWeights attn;
  Tensor ln2_gamma, ln2_beta;
  Tensor w_fc1, b_fc1, w_fc2, b_fc2;
  FreqSelectParams select;  // unused when spectral_guided is false
};

struct DecoderParams {
  std::vector<DecodeLayerParams> layers;
  DescriptorParams descriptor;

  static DecoderParams init(const HiLoConfig& cfg, std::size_t width, std::mt19937_64& rng);
  void for_each_mut(const std::function<void(const std::string&, Tensor&)>& fn);
};

HiLoWeights init_hilo_weights(const HiLoConfig& cfg, std::size_t width, std::mt19937_64& rng);

/// Token order that lists the G x G grid window by window (row-major windows,
/// row-major inside each window). Entry i is the original token index.
std::vector<std::size_t> window_order(std::size_t grid, std::size_t window);

/// [N/w^2 x N] averaging matrix mapping grid tokens to one token per window.
Tensor window_pool_matrix(std::size_t grid, std::size_t window);

/// Windowed self-attention branch: per-window attention with `heads` heads of
/// width dh. Returns [N x heads*dh] in original token order.
Tensor window_branch(const Tensor& x, std::size_t grid, std::size_t window, std::size_t heads,
                     const Tensor& w_qkv, const Tensor& b_qkv);

/// Pooled-key branch: queries from all tokens, keys/values from window
/// averages. Returns [N x heads*dh].
Tensor pooled_branch(const Tensor& x, std::size_t grid, std::size_t window, std::size_t heads,
                     const Tensor& w_q, const Tensor& b_q, const Tensor& w_kv, const Tensor& b_kv);

/// HiLo attention: windowed heads and pooled-key heads concatenated on the
/// channel axis, then projected back to D.
Tensor hilo_attention(const Tensor& x, const HiLoConfig& cfg, const HiLoWeights& w);

/// Windowed attention with every head, projected by w_out.
Tensor windowed_attention(const Tensor& x, std::size_t window, std::size_t heads, const Tensor& w_qkv,
                          const Tensor& b_qkv, const Tensor& w_out, const Tensor& b_out);

/// Pooled-key attention with every head, projected by w_out.
Tensor pooled_key_attention(const Tensor& x, std::size_t window, std::size_t heads, const Tensor& w_q,
                            const Tensor& b_q, const Tensor& w_kv, const Tensor& b_kv,
                            const Tensor& w_out, const Tensor& b_out);

/// (cos(z_j, xi) + 1) / 2 per token; zero-norm tokens score 0.
Tensor cosine_gate(const Tensor& z, const Tensor& xi);

/// Multiplies row j of x by s[j].
Tensor scale_rows(const Tensor& x, const Tensor& s);

/// z_hat_j = s_j * (P z_j).
Tensor freq_select(const Tensor& z, const FreqSelectParams& p);

/// phi([t * g ; t]) for class embeddings t [C x D] and global feature g [D].
Tensor relationship_descriptor(const Tensor& t, const Tensor& g, const DescriptorParams& p);

/// One decode layer: attention + residual, MLP + residual, then frequency
/// selection when spectral guidance is on.
Tensor decode_layer(const Tensor& z, const HiLoConfig& cfg, const DecodeLayerParams& p);

/// Mask logits [C x N] = descriptor(t, g) * z_hat^T.
Tensor decode(const Tensor& H, const Tensor& g, const Tensor& t, const HiLoConfig& cfg,
              const DecoderParams& params);

struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;  // row-major class ids

  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
};

/// Per-patch argmax over `class_subset` (ties to the lowest class id), then
/// nearest-neighbour upsampling by `patch` pixels.
LabelMap predict(const Tensor& masks, std::span<const int> class_subset, std::size_t grid,
                 std::size_t patch);

}  // namespace sptseg
