#include "sptseg/decoder.hpp"

#include <cmath>

#include "sptseg/errors.hpp"
#include "sptseg/nn.hpp"
#include "sptseg/spectral.hpp"

namespace sptseg {

std::size_t HiLoConfig::high_heads() const {
  const double h = alpha * static_cast<double>(heads);
  const auto r = static_cast<std::size_t>(std::llround(h));
  if (std::abs(h - static_cast<double>(r)) > 1e-9) {
    throw ConfigError("decoder: alpha * heads = " + std::to_string(h) + " is not an integer");
  }
  return r;
}

void HiLoConfig::validate(std::size_t width, std::size_t grid) const {
  if (layers == 0) throw ConfigError("decoder: layers must be >= 1");
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("decoder: width " + std::to_string(width) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("decoder: alpha must lie in [0, 1]");
  high_heads();
  if (window == 0 || grid % window != 0) {
    throw ConfigError("decoder: grid " + std::to_string(grid) + " not divisible by window " +
                      std::to_string(window));
  }
  if (mlp_ratio == 0) throw ConfigError("decoder: mlp_ratio must be positive");
}

namespace {

Tensor gaussian(Shape shape, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, sigma);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

// Row gather for [N x C] tensors.
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  const std::size_t c = x.extent(1);
  std::vector<std::size_t> idx(rows.size() * c);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < c; ++j) idx[i * c + j] = rows[i] * c + j;
  return gather(x, std::move(idx), {rows.size(), c});
}

}  // namespace

HiLoWeights init_hilo_weights(const HiLoConfig& cfg, std::size_t width, std::mt19937_64& rng) {
  const std::size_t dh = width / cfg.heads;
  const double sd = 1.0 / std::sqrt(static_cast<double>(width));
  HiLoWeights w;
  const std::size_t hh = cfg.spectral_guided ? cfg.high_heads() : cfg.heads;
  const std::size_t hl = cfg.heads - hh;
  if (hh > 0) {
    w.w_qkv_high = gaussian({width, 3 * hh * dh}, sd, rng);
    w.b_qkv_high = Tensor::zeros({3 * hh * dh}, true);
  }
  if (hl > 0) {
    w.w_q_low = gaussian({width, hl * dh}, sd, rng);
    w.b_q_low = Tensor::zeros({hl * dh}, true);
    w.w_kv_low = gaussian({width, 2 * hl * dh}, sd, rng);
    w.b_kv_low = Tensor::zeros({2 * hl * dh}, true);
  }
  w.w_out = gaussian({width, width}, 0.5 * sd, rng);
  w.b_out = Tensor::zeros({width}, true);
  return w;
}

DecoderParams DecoderParams::init(const HiLoConfig& cfg, std::size_t width, std::mt19937_64& rng) {
  DecoderParams p;
  const std::size_t hidden = width * cfg.mlp_ratio;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    DecodeLayerParams L;
    L.ln1_gamma = Tensor::full({width}, 1.0, true);
    L.ln1_beta = Tensor::zeros({width}, true);
    L.attn = init_hilo_weights(cfg, width, rng);
    L.ln2_gamma = Tensor::full({width}, 1.0, true);
    L.ln2_beta = Tensor::zeros({width}, true);
    L.w_fc1 = gaussian({width, hidden}, 1.0 / std::sqrt(static_cast<double>(width)), rng);
    L.b_fc1 = Tensor::zeros({hidden}, true);
    L.w_fc2 = gaussian({hidden, width}, 0.5 / std::sqrt(static_cast<double>(hidden)), rng);
    L.b_fc2 = Tensor::zeros({width}, true);
    if (cfg.spectral_guided) {
      std::normal_distribution<double> dist(0.0, 1.0);
      std::vector<double> xi(width);
      double norm = 0.0;
      for (auto& v : xi) {
        v = dist(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (auto& v : xi) v /= norm;
      L.select.xi = Tensor({width}, std::move(xi), true);
      std::normal_distribution<double> noise(0.0, 0.02);
      std::vector<double> P(width * width);
      for (std::size_t i = 0; i < width; ++i)
        for (std::size_t j = 0; j < width; ++j) P[i * width + j] = (i == j ? 1.0 : 0.0) + noise(rng);
      L.select.P = Tensor({width, width}, std::move(P), true);
    }
    p.layers.push_back(std::move(L));
  }
  p.descriptor.weight = gaussian({2 * width, width}, 1.0 / std::sqrt(static_cast<double>(2 * width)), rng);
  p.descriptor.bias = Tensor::zeros({width}, true);
  return p;
}

void DecoderParams::for_each_mut(const std::function<void(const std::string&, Tensor&)>& fn) {
  auto visit = [&](const std::string& name, Tensor& t) {
    if (t.defined()) fn(name, t);
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "decoder.layer" + std::to_string(l + 1) + ".";
    auto& L = layers[l];
    visit(p + "ln1_gamma", L.ln1_gamma);
    visit(p + "ln1_beta", L.ln1_beta);
    visit(p + "attn.w_qkv_high", L.attn.w_qkv_high);
    visit(p + "attn.b_qkv_high", L.attn.b_qkv_high);
    visit(p + "attn.w_q_low", L.attn.w_q_low);
    visit(p + "attn.b_q_low", L.attn.b_q_low);
    visit(p + "attn.w_kv_low", L.attn.w_kv_low);
    visit(p + "attn.b_kv_low", L.attn.b_kv_low);
    visit(p + "attn.w_out", L.attn.w_out);
    visit(p + "attn.b_out", L.attn.b_out);
    visit(p + "ln2_gamma", L.ln2_gamma);
    visit(p + "ln2_beta", L.ln2_beta);
    visit(p + "mlp.w1", L.w_fc1);
    visit(p + "mlp.b1", L.b_fc1);
    visit(p + "mlp.w2", L.w_fc2);
    visit(p + "mlp.b2", L.b_fc2);
    visit(p + "select.xi", L.select.xi);
    visit(p + "select.P", L.select.P);
  }
  visit("decoder.descriptor.weight", descriptor.weight);
  visit("decoder.descriptor.bias", descriptor.bias);
}

std::vector<std::size_t> window_order(std::size_t grid, std::size_t window) {
  if (window == 0 || grid % window != 0) {
    throw DimensionError("grid " + std::to_string(grid) + " not divisible by window " + std::to_string(window));
  }
  const std::size_t per_side = grid / window;
  std::vector<std::size_t> order;
  order.reserve(grid * grid);
  for (std::size_t wr = 0; wr < per_side; ++wr)
    for (std::size_t wc = 0; wc < per_side; ++wc)
      for (std::size_t dy = 0; dy < window; ++dy)
        for (std::size_t dx = 0; dx < window; ++dx)
          order.push_back((wr * window + dy) * grid + wc * window + dx);
  return order;
}

Tensor window_pool_matrix(std::size_t grid, std::size_t window) {
  const auto order = window_order(grid, window);
  const std::size_t area = window * window, windows = order.size() / area, n = grid * grid;
  std::vector<double> m(windows * n, 0.0);
  for (std::size_t w = 0; w < windows; ++w)
    for (std::size_t k = 0; k < area; ++k) m[w * n + order[w * area + k]] = 1.0 / static_cast<double>(area);
  return Tensor({windows, n}, std::move(m));
}

Tensor window_branch(const Tensor& x, std::size_t grid, std::size_t window, std::size_t heads,
                     const Tensor& w_qkv, const Tensor& b_qkv) {
  const auto order = window_order(grid, window);
  if (x.extent(0) != order.size()) {
    throw DimensionError("window_branch: " + shape_str(x.shape()) + " is not a " + std::to_string(grid) +
                         "x" + std::to_string(grid) + " token grid");
  }
  std::vector<std::size_t> inverse(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) inverse[order[i]] = i;

  const std::size_t inner = w_qkv.extent(1) / 3;
  Tensor qkv = gather_rows(linear(x, w_qkv, b_qkv), order);
  const std::size_t area = window * window;
  Tensor out = attention(slice_cols(qkv, 0, inner), slice_cols(qkv, inner, 2 * inner),
                         slice_cols(qkv, 2 * inner, 3 * inner), heads, area, area);
  return gather_rows(out, inverse);
}

Tensor pooled_branch(const Tensor& x, std::size_t grid, std::size_t window, std::size_t heads,
                     const Tensor& w_q, const Tensor& b_q, const Tensor& w_kv, const Tensor& b_kv) {
  if (x.extent(0) != grid * grid) {
    throw DimensionError("pooled_branch: " + shape_str(x.shape()) + " is not a " + std::to_string(grid) +
                         "x" + std::to_string(grid) + " token grid");
  }
  Tensor pooled = matmul(window_pool_matrix(grid, window), x);
  Tensor q = linear(x, w_q, b_q);
  Tensor kv = linear(pooled, w_kv, b_kv);
  const std::size_t inner = w_q.extent(1);
  return attention(q, slice_cols(kv, 0, inner), slice_cols(kv, inner, 2 * inner), heads);
}

Tensor hilo_attention(const Tensor& x, const HiLoConfig& cfg, const HiLoWeights& w) {
  const std::size_t grid = grid_side(x.extent(0));
  cfg.validate(x.extent(1), grid);
  const std::size_t hh = cfg.high_heads(), hl = cfg.low_heads();
  std::vector<Tensor> parts;
  if (hh > 0) parts.push_back(window_branch(x, grid, cfg.window, hh, w.w_qkv_high, w.b_qkv_high));
  if (hl > 0) {
    parts.push_back(pooled_branch(x, grid, cfg.window, hl, w.w_q_low, w.b_q_low, w.w_kv_low, w.b_kv_low));
  }
  Tensor merged = parts.size() == 1 ? parts.front() : concat_cols(parts);
  return linear(merged, w.w_out, w.b_out);
}

Tensor windowed_attention(const Tensor& x, std::size_t window, std::size_t heads, const Tensor& w_qkv,
                          const Tensor& b_qkv, const Tensor& w_out, const Tensor& b_out) {
  const std::size_t grid = grid_side(x.extent(0));
  return linear(window_branch(x, grid, window, heads, w_qkv, b_qkv), w_out, b_out);
}

Tensor pooled_key_attention(const Tensor& x, std::size_t window, std::size_t heads, const Tensor& w_q,
                            const Tensor& b_q, const Tensor& w_kv, const Tensor& b_kv,
                            const Tensor& w_out, const Tensor& b_out) {
  const std::size_t grid = grid_side(x.extent(0));
  return linear(pooled_branch(x, grid, window, heads, w_q, b_q, w_kv, b_kv), w_out, b_out);
}

Tensor cosine_gate(const Tensor& z, const Tensor& xi) {
  if (z.rank() != 2 || xi.shape() != Shape{z.extent(1)}) {
    throw DimensionError("cosine_gate: z " + shape_str(z.shape()) + " vs xi " + shape_str(xi.shape()));
  }
  const std::size_t n = z.extent(0), d = z.extent(1);
  auto Z = z.data();
  auto X = xi.data();
  double xi_norm = 0.0;
  for (double v : X) xi_norm += v * v;
  xi_norm = std::sqrt(xi_norm);
  if (xi_norm == 0.0) throw ContractError("freq_select: task embedding xi must be non-zero");

  std::vector<double> s(n), cosv(n), norms(n);
  for (std::size_t j = 0; j < n; ++j) {
    double dot = 0.0, nn = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      dot += Z[j * d + c] * X[c];
      nn += Z[j * d + c] * Z[j * d + c];
    }
    norms[j] = std::sqrt(nn);
    if (norms[j] == 0.0) {
      cosv[j] = 0.0;
      s[j] = 0.0;
      continue;
    }
    cosv[j] = dot / (norms[j] * xi_norm);
    s[j] = 0.5 * (cosv[j] + 1.0);
  }
  return make_op_result(
      "cosine_gate", {n}, std::move(s), {z, xi},
      [z, xi, n, d, xi_norm, cosv = std::move(cosv), norms = std::move(norms)](OpContext& ctx) {
        auto Z = z.data();
        auto X = xi.data();
        for (std::size_t j = 0; j < n; ++j) {
          if (norms[j] == 0.0) continue;
          const double g = 0.5 * ctx.grad_out[j];
          const double inv = 1.0 / (norms[j] * xi_norm);
          for (std::size_t c = 0; c < d; ++c) {
            const double zc = Z[j * d + c], xc = X[c];
            if (!ctx.grad_in[0].empty())
              ctx.grad_in[0][j * d + c] += g * (xc * inv - cosv[j] * zc / (norms[j] * norms[j]));
            if (!ctx.grad_in[1].empty())
              ctx.grad_in[1][c] += g * (zc * inv - cosv[j] * xc / (xi_norm * xi_norm));
          }
        }
      });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  if (x.rank() != 2 || s.shape() != Shape{x.extent(0)}) {
    throw DimensionError("scale_rows: x " + shape_str(x.shape()) + " vs s " + shape_str(s.shape()));
  }
  const std::size_t n = x.extent(0), d = x.extent(1);
  auto Xv = x.data();
  auto S = s.data();
  std::vector<double> out(n * d);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < d; ++c) out[j * d + c] = S[j] * Xv[j * d + c];
  return make_op_result("scale_rows", {n, d}, std::move(out), {x, s}, [x, s, n, d](OpContext& ctx) {
    auto Xv = x.data();
    auto S = s.data();
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double g = ctx.grad_out[j * d + c];
        if (!ctx.grad_in[0].empty()) ctx.grad_in[0][j * d + c] += g * S[j];
        acc += g * Xv[j * d + c];
      }
      if (!ctx.grad_in[1].empty()) ctx.grad_in[1][j] += acc;
    }
  });
}

Tensor freq_select(const Tensor& z, const FreqSelectParams& p) {
  if (p.P.rank() != 2 || p.P.extent(0) != z.extent(1) || p.P.extent(1) != z.extent(1)) {
    throw DimensionError("freq_select: P " + shape_str(p.P.shape()) + " vs z " + shape_str(z.shape()));
  }
  Tensor gate = cosine_gate(z, p.xi);
  return scale_rows(matmul(z, transpose(p.P)), gate);
}

Tensor relationship_descriptor(const Tensor& t, const Tensor& g, const DescriptorParams& p) {
  if (t.rank() != 2 || g.shape() != Shape{t.extent(1)}) {
    throw DimensionError("relationship_descriptor: t " + shape_str(t.shape()) + " vs g " +
                         shape_str(g.shape()));
  }
  return linear(concat_cols({mul(t, g), t}), p.weight, p.bias);
}

Tensor decode_layer(const Tensor& z, const HiLoConfig& cfg, const DecodeLayerParams& p) {
  Tensor h = layer_norm(z, p.ln1_gamma, p.ln1_beta);
  Tensor attn;
  if (cfg.spectral_guided) {
    attn = hilo_attention(h, cfg, p.attn);
  } else {
    const std::size_t d = z.extent(1);
    Tensor qkv = linear(h, p.attn.w_qkv_high, p.attn.b_qkv_high);
    attn = linear(attention(slice_cols(qkv, 0, d), slice_cols(qkv, d, 2 * d), slice_cols(qkv, 2 * d, 3 * d),
                            cfg.heads),
                  p.attn.w_out, p.attn.b_out);
  }
  Tensor x = add(z, attn);
  Tensor hidden = gelu(linear(layer_norm(x, p.ln2_gamma, p.ln2_beta), p.w_fc1, p.b_fc1));
  x = add(x, linear(hidden, p.w_fc2, p.b_fc2));
  return cfg.spectral_guided ? freq_select(x, p.select) : x;
}

Tensor decode(const Tensor& H, const Tensor& g, const Tensor& t, const HiLoConfig& cfg,
              const DecoderParams& params) {
  if (t.rank() != 2 || t.extent(0) < 2) {
    throw ContractError("decode: need at least two class embeddings, got " + shape_str(t.shape()));
  }
  if (params.layers.size() != cfg.layers) {
    throw ConfigError("decode: parameter stack has " + std::to_string(params.layers.size()) +
                      " layers, config asks for " + std::to_string(cfg.layers));
  }
  cfg.validate(H.extent(1), grid_side(H.extent(0)));
  Tensor z = H;
  for (const auto& layer : params.layers) z = decode_layer(z, cfg, layer);
  Tensor desc = relationship_descriptor(t, g, params.descriptor);
  return matmul(desc, transpose(z));
}

LabelMap predict(const Tensor& masks, std::span<const int> class_subset, std::size_t grid,
                 std::size_t patch) {
  if (class_subset.empty()) throw ContractError("predict: empty class subset");
  if (masks.rank() != 2 || masks.extent(1) != grid * grid) {
    throw DimensionError("predict: masks " + shape_str(masks.shape()) + " vs grid " + std::to_string(grid));
  }
  const std::size_t classes = masks.extent(0), n = grid * grid;
  for (int c : class_subset) {
    if (c < 0 || static_cast<std::size_t>(c) >= classes) {
      throw ContractError("predict: class " + std::to_string(c) + " outside [0," + std::to_string(classes) + ")");
    }
  }
  auto M = masks.data();
  std::vector<std::uint8_t> patch_labels(n);
  for (std::size_t j = 0; j < n; ++j) {
    int best = class_subset[0];
    double best_v = M[static_cast<std::size_t>(best) * n + j];
    for (int c : class_subset) {
      const double v = M[static_cast<std::size_t>(c) * n + j];
      if (v > best_v || (v == best_v && c < best)) {
        best = c;
        best_v = v;
      }
    }
    patch_labels[j] = static_cast<std::uint8_t>(best);
  }
  LabelMap out;
  out.height = out.width = grid * patch;
  out.labels.resize(out.height * out.width);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) out.labels[y * out.width + x] = patch_labels[(y / patch) * grid + x / patch];
  return out;
}

}  // namespace sptseg
