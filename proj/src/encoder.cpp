#include "sptseg/encoder.hpp"

#include <cmath>

#include "sptseg/errors.hpp"
#include "sptseg/nn.hpp"

namespace sptseg {

void EncoderConfig::validate() const {
  if (layers == 0 || width == 0 || heads == 0 || patch == 0 || image_side == 0 || mlp_ratio == 0) {
    throw ConfigError("encoder: extents must be positive");
  }
  if (prompt_length == 0) throw ConfigError("encoder: prompt_length must be >= 1");
  if (image_side % patch != 0) {
    throw ConfigError("encoder: image_side " + std::to_string(image_side) +
                      " not divisible by patch " + std::to_string(patch));
  }
  if (width % heads != 0) throw ConfigError("encoder: width not divisible by heads");
  if (spt_enabled() && (spt_first > spt_last || spt_last > layers)) {
    throw ConfigError("encoder: spt range [" + std::to_string(spt_first) + "," +
                      std::to_string(spt_last) + "] outside [1," + std::to_string(layers) + "]");
  }
}

namespace {

Tensor gaussian(Shape shape, double sigma, std::mt19937_64& rng, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, sigma);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

Tensor sinusoidal_positions(std::size_t tokens, std::size_t width) {
  std::vector<double> v(tokens * width);
  for (std::size_t p = 0; p < tokens; ++p) {
    for (std::size_t i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      const double a = static_cast<double>(p) * freq;
      v[p * width + i] = (i % 2 == 0) ? std::sin(a) : std::cos(a);
    }
  }
  return Tensor({tokens, width}, std::move(v));
}

FrozenBackbone FrozenBackbone::init(const EncoderConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t d = cfg.width, hidden = cfg.width * cfg.mlp_ratio;
  const std::size_t patch_dim = cfg.patch * cfg.patch * 3;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  FrozenBackbone b;
  b.patch_weight = gaussian({patch_dim, d}, 1.0 / std::sqrt(static_cast<double>(patch_dim)), rng, false);
  b.patch_bias = gaussian({d}, 0.1, rng, false);
  b.cls = gaussian({d}, 1.0, rng, false);
  b.position = sinusoidal_positions(cfg.tokens(), d);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    BackboneLayer L;
    L.ln1_gamma = Tensor::full({d}, 1.0);
    L.ln1_beta = Tensor::zeros({d});
    L.w_qkv = gaussian({d, 3 * d}, sd, rng, false);
    L.b_qkv = Tensor::zeros({3 * d});
    L.w_out = gaussian({d, d}, 0.5 * sd, rng, false);
    L.b_out = Tensor::zeros({d});
    L.ln2_gamma = Tensor::full({d}, 1.0);
    L.ln2_beta = Tensor::zeros({d});
    L.w_fc1 = gaussian({d, hidden}, sd, rng, false);
    L.b_fc1 = Tensor::zeros({hidden});
    L.w_fc2 = gaussian({hidden, d}, 0.5 / std::sqrt(static_cast<double>(hidden)), rng, false);
    L.b_fc2 = Tensor::zeros({d});
    b.layers.push_back(std::move(L));
  }
  b.final_gamma = Tensor::full({d}, 1.0);
  b.final_beta = Tensor::zeros({d});
  return b;
}

void FrozenBackbone::for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<FrozenBackbone*>(this)->for_each_mut(
      [&](const std::string& name, Tensor& t) { fn(name, t); });
}

void FrozenBackbone::for_each_mut(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("backbone.patch_weight", patch_weight);
  fn("backbone.patch_bias", patch_bias);
  fn("backbone.cls", cls);
  fn("backbone.position", position);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "backbone.layer" + std::to_string(l + 1) + ".";
    auto& L = layers[l];
    fn(p + "ln1_gamma", L.ln1_gamma);
    fn(p + "ln1_beta", L.ln1_beta);
    fn(p + "w_qkv", L.w_qkv);
    fn(p + "b_qkv", L.b_qkv);
    fn(p + "w_out", L.w_out);
    fn(p + "b_out", L.b_out);
    fn(p + "ln2_gamma", L.ln2_gamma);
    fn(p + "ln2_beta", L.ln2_beta);
    fn(p + "mlp.w1", L.w_fc1);
    fn(p + "mlp.b1", L.b_fc1);
    fn(p + "mlp.w2", L.w_fc2);
    fn(p + "mlp.b2", L.b_fc2);
  }
  fn("backbone.final_gamma", final_gamma);
  fn("backbone.final_beta", final_beta);
}

PromptParams PromptParams::init(const EncoderConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  PromptParams p;
  for (std::size_t l = 1; l <= cfg.layers; ++l) {
    p.prompts.push_back(gaussian({cfg.prompt_length, cfg.width}, 0.1, rng, true));
    if (cfg.spt_at(l)) {
      p.filters.emplace_back(SpectralFilter::identity(cfg.grid(), cfg.width, 0.02, rng));
    } else {
      p.filters.emplace_back(std::nullopt);
    }
  }
  return p;
}

void PromptParams::for_each_mut(const std::function<void(const std::string&, Tensor&)>& fn) {
  for (std::size_t l = 0; l < prompts.size(); ++l) {
    fn("prompt.layer" + std::to_string(l + 1) + ".V", prompts[l]);
  }
  for (std::size_t l = 0; l < filters.size(); ++l) {
    if (!filters[l]) continue;
    const std::string p = "prompt.layer" + std::to_string(l + 1) + ".w_f.";
    fn(p + "re", filters[l]->re);
    fn(p + "im", filters[l]->im);
  }
}

TokenSequence patch_embed(std::span<const double> image, const EncoderConfig& cfg,
                          const FrozenBackbone& backbone, const PromptParams& prompts) {
  const std::size_t s = cfg.image_side, p = cfg.patch;
  if (s % p != 0) {
    throw DimensionError("patch_embed: image side " + std::to_string(s) + " not divisible by patch " +
                         std::to_string(p));
  }
  if (image.size() != s * s * 3) {
    throw DimensionError("patch_embed: expected " + std::to_string(s * s * 3) + " pixel values, got " +
                         std::to_string(image.size()));
  }
  const std::size_t g = s / p, patch_dim = p * p * 3;
  std::vector<double> patches(g * g * patch_dim);
  for (std::size_t pr = 0; pr < g; ++pr)
    for (std::size_t pc = 0; pc < g; ++pc) {
      double* dst = patches.data() + (pr * g + pc) * patch_dim;
      for (std::size_t dy = 0; dy < p; ++dy)
        for (std::size_t dx = 0; dx < p; ++dx)
          for (std::size_t c = 0; c < 3; ++c)
            *dst++ = image[((pr * p + dy) * s + (pc * p + dx)) * 3 + c];
    }
  Tensor flat({g * g, patch_dim}, std::move(patches));
  Tensor H = add(linear(flat, backbone.patch_weight, backbone.patch_bias), backbone.position);
  return {backbone.cls, prompts.prompts.at(0), H};
}

TokenSequence encoder_layer(std::size_t layer, const TokenSequence& in, const EncoderConfig& cfg,
                            const BackboneLayer& w, const SpectralFilter* spt) {
  if (layer == 0 || layer > cfg.layers) {
    throw ContractError("encoder_layer: layer " + std::to_string(layer) + " outside [1," +
                        std::to_string(cfg.layers) + "]");
  }
  if ((spt != nullptr) != cfg.spt_at(layer)) {
    throw ContractError("encoder_layer: spectral filter " + std::string(spt ? "supplied" : "missing") +
                        " for layer " + std::to_string(layer));
  }
  const std::size_t m = in.V.extent(0), n = in.H.extent(0), d = cfg.width;
  Tensor H = spt ? add(in.H, spectral_prompt(in.H, in.g, *spt)) : in.H;
  Tensor x = concat_rows({in.g, in.V, H});

  Tensor h = layer_norm(x, w.ln1_gamma, w.ln1_beta);
  Tensor qkv = linear(h, w.w_qkv, w.b_qkv);
  Tensor attn = attention(slice_cols(qkv, 0, d), slice_cols(qkv, d, 2 * d), slice_cols(qkv, 2 * d, 3 * d),
                          cfg.heads);
  x = add(x, linear(attn, w.w_out, w.b_out));
  Tensor hidden = gelu(linear(layer_norm(x, w.ln2_gamma, w.ln2_beta), w.w_fc1, w.b_fc1));
  x = add(x, linear(hidden, w.w_fc2, w.b_fc2));

  return {row(x, 0), slice_rows(x, 1, 1 + m), slice_rows(x, 1 + m, 1 + m + n)};
}

Encoded encode(std::span<const double> image, const EncoderConfig& cfg, const FrozenBackbone& backbone,
               const PromptParams& prompts) {
  TokenSequence seq = patch_embed(image, cfg, backbone, prompts);
  for (std::size_t l = 1; l <= cfg.layers; ++l) {
    seq.V = prompts.prompts.at(l - 1);
    const auto& filter = prompts.filters.at(l - 1);
    seq = encoder_layer(l, seq, cfg, backbone.layers.at(l - 1), filter ? &*filter : nullptr);
  }
  Tensor g = reshape(layer_norm(reshape(seq.g, {1, cfg.width}), backbone.final_gamma, backbone.final_beta),
                     {cfg.width});
  Tensor H = layer_norm(seq.H, backbone.final_gamma, backbone.final_beta);
  return {g, H};
}

}  // namespace sptseg
