#pragma once

#include <cstddef>

#include "sptseg/tensor.hpp"

namespace sptseg {

/// Row-wise layer normalization of [N x D] with per-channel affine.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// tanh-approximated GELU.
Tensor gelu(const Tensor& x);

/// x * W + b, with b broadcast over rows.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Scaled dot-product multi-head attention.
///
/// q is [Nq x H*dh], k and v are [Nk x H*dh]. Rows are grouped into
/// independent blocks: block b attends q rows [b*q_block, (b+1)*q_block) to
/// k/v rows [b*kv_block, (b+1)*kv_block). A single block (q_block = Nq,
/// kv_block = Nk) is ordinary global attention; equal-size blocks over
/// window-major token order give non-overlapping windowed attention.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 std::size_t q_block, std::size_t kv_block);

inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  return attention(q, k, v, heads, q.extent(0), k.extent(0));
}

}  // namespace sptseg
