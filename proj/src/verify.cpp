#include "sptseg/verify.hpp"

#include <bit>
#include <cmath>
#include <complex>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>

#include "sptseg/decoder.hpp"
#include "sptseg/encoder.hpp"
#include "sptseg/errors.hpp"
#include "sptseg/losses.hpp"
#include "sptseg/metrics.hpp"
#include "sptseg/nn.hpp"
#include "sptseg/rng.hpp"
#include "sptseg/spectral.hpp"

namespace sptseg {

namespace {

using Results = std::vector<PropertyResult>;

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

// ---------------------------------------------------------------- fft

// Textbook O(G^4) transform of one channel.
ComplexTensor direct_dft2(const ComplexTensor& x, bool inverse) {
  const std::size_t g = x.shape[0], d = x.shape[2];
  ComplexTensor out(x.shape);
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t u = 0; u < g; ++u) {
      for (std::size_t v = 0; v < g; ++v) {
        std::complex<double> acc = 0.0;
        for (std::size_t r = 0; r < g; ++r) {
          for (std::size_t s = 0; s < g; ++s) {
            const double ang = sign * 2.0 * std::numbers::pi *
                               static_cast<double>((u * r + v * s) % g) / static_cast<double>(g);
            const std::size_t i = (r * g + s) * d + c;
            acc += std::complex<double>(x.re[i], x.im[i]) * std::polar(1.0, ang);
          }
        }
        const std::size_t o = (u * g + v) * d + c;
        out.re[o] = acc.real();
        out.im[o] = acc.imag();
      }
    }
  }
  if (inverse) {
    const double n = static_cast<double>(g * g);
    for (auto& v : out.re) v /= n;
    for (auto& v : out.im) v /= n;
  }
  return out;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Results fft_suite() {
  Results out;
  auto rng = make_stream(0, "verify/fft");
  constexpr double kTol = 1e-9;

  for (std::size_t g : {2, 3, 4, 5, 8, 12}) {
    Tensor x = random_tensor({g, g, 3}, rng);
    FrequencyMap f = fft2(x);
    ComplexTensor cx(x.shape());
    std::copy(x.data().begin(), x.data().end(), cx.re.begin());
    ComplexTensor oracle = direct_dft2(cx, false);
    const double err = std::max(max_diff(f.re, oracle.re), max_diff(f.im, oracle.im));
    out.push_back({"fft.direct_oracle.g" + std::to_string(g), err <= kTol, fmt("max abs diff %.3g", err)});

    double residue = 0.0;
    Tensor back = ifft2(f, &residue);
    std::vector<double> xv(x.data().begin(), x.data().end()), bv(back.data().begin(), back.data().end());
    const double rt = std::max(max_diff(xv, bv), residue);
    out.push_back({"fft.roundtrip.g" + std::to_string(g), rt <= kTol, fmt("max abs diff %.3g", rt)});

    double spatial = 0.0, spectral = 0.0;
    for (double v : xv) spatial += v * v;
    for (std::size_t i = 0; i < f.re.size(); ++i) spectral += f.re[i] * f.re[i] + f.im[i] * f.im[i];
    spectral /= static_cast<double>(g * g);
    const double pv = std::abs(spatial - spectral) / std::max(1.0, spatial);
    out.push_back({"fft.parseval.g" + std::to_string(g), pv <= kTol, fmt("relative gap %.3g", pv)});
  }

  {
    const std::size_t g = 6;
    Tensor c = Tensor::full({g, g, 2}, 0.75);
    FrequencyMap f = fft2(c);
    double err = 0.0;
    for (std::size_t i = 0; i < f.re.size(); ++i) {
      const double want = i < 2 ? 0.75 * static_cast<double>(g * g) : 0.0;
      err = std::max({err, std::abs(f.re[i] - want), std::abs(f.im[i])});
    }
    out.push_back({"fft.constant_dc", err <= kTol, fmt("max abs diff %.3g", err)});
  }

  {
    // filtering equals direct transform, pointwise product, direct inverse
    const std::size_t g = 4, d = 2;
    Tensor x = random_tensor({g * g, d}, rng);
    SpectralFilter w{random_tensor({g, g, d}, rng), random_tensor({g, g, d}, rng)};
    Tensor s = spectral_filter(x, w);
    ComplexTensor cx({g, g, d});
    std::copy(x.data().begin(), x.data().end(), cx.re.begin());
    ComplexTensor f = direct_dft2(cx, false);
    for (std::size_t i = 0; i < f.re.size(); ++i) {
      const auto p = std::complex<double>(f.re[i], f.im[i]) * std::complex<double>(w.re[i], w.im[i]);
      f.re[i] = p.real();
      f.im[i] = p.imag();
    }
    ComplexTensor inv = direct_dft2(f, true);
    std::vector<double> sv(s.data().begin(), s.data().end());
    const double err = max_diff(sv, inv.re);
    out.push_back({"fft.filter_oracle", err <= kTol, fmt("max abs diff %.3g", err)});
  }
  return out;
}

// ---------------------------------------------------------------- grad

constexpr double kGradTol = 1e-4;

// Reduces any output to a scalar through fixed random weights so every
// output entry contributes a distinct gradient.
Tensor probe(const Tensor& y, std::uint64_t salt) {
  auto rng = make_stream(salt, "verify/probe");
  return sum(mul(y, random_tensor(y.shape(), rng)));
}

PropertyResult grad_property(const std::string& id, const ExpressionBuilder& f, const std::vector<Tensor>& inputs) {
  GradCheckReport r = check_gradients(f, inputs);
  if (r.non_finite) return {id, false, "non-finite: " + r.message};
  return {id, r.passed(kGradTol), fmt("max rel error %.3g", r.worst())};
}

// Rebinds every tensor visited by for_each_mut to consecutive leaves.
template <class Params>
Params rebind(Params p, const std::vector<Tensor>& leaves, std::size_t offset) {
  std::size_t k = offset;
  p.for_each_mut([&](const std::string&, Tensor& t) { t = leaves[k++]; });
  return p;
}

template <class Params>
void append_params(Params& p, std::vector<Tensor>& inputs) {
  p.for_each_mut([&](const std::string&, Tensor& t) { inputs.push_back(t); });
}

Results grad_suite() {
  Results out;
  auto rng = make_stream(0, "verify/grad");

  {
    const std::size_t g = 4, d = 3;
    std::vector<Tensor> in = {random_tensor({g * g, d}, rng), random_tensor({d}, rng),
                              random_tensor({g, g, d}, rng), random_tensor({g, g, d}, rng)};
    out.push_back(grad_property("grad.spectral_prompt", [](const std::vector<Tensor>& v) {
      return probe(spectral_prompt(v[0], v[1], SpectralFilter{v[2], v[3]}), 1);
    }, in));
  }

  {
    EncoderConfig cfg;
    cfg.layers = 1;
    cfg.width = 8;
    cfg.heads = 2;
    cfg.image_side = 16;
    cfg.prompt_length = 2;
    cfg.mlp_ratio = 2;
    cfg.spt_first = cfg.spt_last = 1;
    auto brng = make_stream(0, "verify/grad/backbone");
    FrozenBackbone backbone = FrozenBackbone::init(cfg, brng);
    const BackboneLayer layer = backbone.layers[0];
    const std::size_t n = cfg.tokens(), d = cfg.width, g = cfg.grid();
    std::vector<Tensor> in = {random_tensor({d}, rng), random_tensor({cfg.prompt_length, d}, rng),
                              random_tensor({n, d}, rng), random_tensor({g, g, d}, rng, 0.5, 1.5),
                              random_tensor({g, g, d}, rng, -0.5, 0.5)};
    out.push_back(grad_property("grad.encoder_layer", [&](const std::vector<Tensor>& v) {
      SpectralFilter w{v[3], v[4]};
      TokenSequence s = encoder_layer(1, TokenSequence{v[0], v[1], v[2]}, cfg, layer, &w);
      return add(add(probe(s.g, 2), probe(s.V, 3)), probe(s.H, 4));
    }, in));
  }

  {
    HiLoConfig cfg;
    cfg.heads = 2;
    cfg.window = 2;
    const std::size_t d = 8, n = 16;
    auto wrng = make_stream(0, "verify/grad/hilo");
    HiLoWeights w = init_hilo_weights(cfg, d, wrng);
    std::vector<Tensor> in = {random_tensor({n, d}, rng), w.w_qkv_high, w.b_qkv_high, w.w_q_low,
                              w.b_q_low,                  w.w_kv_low,   w.b_kv_low,   w.w_out,
                              w.b_out};
    out.push_back(grad_property("grad.hilo_attention", [&](const std::vector<Tensor>& v) {
      HiLoWeights b{v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
      return probe(hilo_attention(v[0], cfg, b), 5);
    }, in));
  }

  {
    std::vector<Tensor> in = {random_tensor({5, 3}, rng), random_tensor({3}, rng), random_tensor({3, 3}, rng)};
    out.push_back(grad_property("grad.freq_select", [](const std::vector<Tensor>& v) {
      return probe(freq_select(v[0], FreqSelectParams{v[1], v[2]}), 6);
    }, in));
  }

  {
    std::vector<Tensor> in = {random_tensor({3, 4}, rng), random_tensor({4}, rng), random_tensor({8, 4}, rng),
                              random_tensor({4}, rng)};
    out.push_back(grad_property("grad.relationship_descriptor", [](const std::vector<Tensor>& v) {
      return probe(relationship_descriptor(v[0], v[1], DescriptorParams{v[2], v[3]}), 7);
    }, in));
  }

  {
    // Full decoder forward plus loss on a 12 x 12 token grid.
    HiLoConfig cfg;
    cfg.heads = 2;
    cfg.window = 3;
    cfg.layers = 1;
    const std::size_t d = 8, grid = 12, n = grid * grid, classes = 3, factor = 2;
    auto prng = make_stream(0, "verify/grad/decoder");
    DecoderParams params = DecoderParams::init(cfg, d, prng);
    Tensor t = random_tensor({classes, d}, rng);
    const std::size_t side = grid * factor;
    std::vector<int> target(side * side);
    std::uniform_int_distribution<int> label(kIgnoreLabel, static_cast<int>(classes) - 1);
    for (auto& v : target) v = label(rng);
    LossConfig loss;
    std::vector<Tensor> in = {random_tensor({n, d}, rng), random_tensor({d}, rng)};
    append_params(params, in);
    out.push_back(grad_property("grad.decode", [&](const std::vector<Tensor>& v) {
      DecoderParams p = rebind(params, v, 2);
      Tensor masks = decode(v[0], v[1], t, cfg, p);
      Tensor probs = upsample_bilinear(softmax(masks, 0), grid, factor);
      return total_loss(probs, target, side, side, loss).total;
    }, in));
  }

  {
    const std::size_t c = 3, p = 20;
    std::vector<int> target(p);
    std::uniform_int_distribution<int> label(kIgnoreLabel, static_cast<int>(c) - 1);
    for (auto& v : target) v = label(rng);
    std::vector<Tensor> in = {random_tensor({c, p}, rng, -2.0, 2.0)};
    out.push_back(grad_property("grad.focal_loss", [&](const std::vector<Tensor>& v) {
      return focal_loss(softmax(v[0], 0), target, 2.0);
    }, in));
  }

  {
    LossConfig cfg;
    std::vector<Tensor> in = {random_tensor({2, 9, 9}, rng, 0.0, 1.0), random_tensor({2, 9, 9}, rng, 0.0, 1.0)};
    out.push_back(grad_property("grad.ssim_loss", [&](const std::vector<Tensor>& v) {
      return ssim_loss(v[0], v[1], cfg);
    }, in));
  }

  {
    const std::size_t c = 3, h = 8, w = 8;
    LossConfig cfg;
    std::vector<int> target(h * w);
    std::uniform_int_distribution<int> label(kIgnoreLabel, static_cast<int>(c) - 1);
    for (auto& v : target) v = label(rng);
    std::vector<Tensor> in = {random_tensor({c, h * w}, rng, -2.0, 2.0)};
    out.push_back(grad_property("grad.total_loss", [&](const std::vector<Tensor>& v) {
      return total_loss(softmax(v[0], 0), target, h, w, cfg).total;
    }, in));
  }
  return out;
}

// ---------------------------------------------------------------- hilo

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

// Softmax-weighted sum of `vals` rows under scores q.k / sqrt(dh).
std::vector<double> attend(const std::vector<double>& q, const std::vector<std::vector<double>>& keys,
                           const std::vector<std::vector<double>>& vals) {
  std::vector<double> s(keys.size());
  double mx = -INFINITY;
  for (std::size_t j = 0; j < keys.size(); ++j) {
    double dot = 0.0;
    for (std::size_t c = 0; c < q.size(); ++c) dot += q[c] * keys[j][c];
    s[j] = dot / std::sqrt(static_cast<double>(q.size()));
    mx = std::max(mx, s[j]);
  }
  double z = 0.0;
  for (auto& v : s) z += (v = std::exp(v - mx));
  std::vector<double> o(vals[0].size(), 0.0);
  for (std::size_t j = 0; j < keys.size(); ++j)
    for (std::size_t c = 0; c < o.size(); ++c) o[c] += s[j] / z * vals[j][c];
  return o;
}

// x W + b for one row, restricted to output columns [c0, c0 + len).
std::vector<double> project(const Tensor& x, std::size_t r, const Tensor& w, const Tensor& b, std::size_t c0,
                            std::size_t len) {
  std::vector<double> o(len);
  for (std::size_t c = 0; c < len; ++c) {
    double acc = b[c0 + c];
    for (std::size_t k = 0; k < x.extent(1); ++k) acc += x.at(r, k) * w.at(k, c0 + c);
    o[c] = acc;
  }
  return o;
}

Results hilo_suite() {
  Results out;
  auto rng = make_stream(0, "verify/hilo");
  const std::size_t d = 8, grid = 6;
  Tensor x = random_tensor({grid * grid, d}, rng);

  {
    HiLoConfig cfg;
    cfg.heads = 4;
    cfg.window = 3;
    cfg.alpha = 1.0;
    auto wrng = make_stream(0, "verify/hilo/w1");
    HiLoWeights w = init_hilo_weights(cfg, d, wrng);
    Tensor a = hilo_attention(x, cfg, w);
    Tensor b = windowed_attention(x, cfg.window, cfg.heads, w.w_qkv_high, w.b_qkv_high, w.w_out, w.b_out);
    out.push_back({"hilo.alpha1_windowed", bit_equal(a, b), "bitwise comparison"});
  }
  {
    HiLoConfig cfg;
    cfg.heads = 4;
    cfg.window = 3;
    cfg.alpha = 0.0;
    auto wrng = make_stream(0, "verify/hilo/w0");
    HiLoWeights w = init_hilo_weights(cfg, d, wrng);
    Tensor a = hilo_attention(x, cfg, w);
    Tensor b = pooled_key_attention(x, cfg.window, cfg.heads, w.w_q_low, w.b_q_low, w.w_kv_low, w.b_kv_low,
                                    w.w_out, w.b_out);
    out.push_back({"hilo.alpha0_pooled", bit_equal(a, b), "bitwise comparison"});
  }
  {
    // 2 x 2 grid, one 2 x 2 window, one head per branch, D = 4.
    HiLoConfig cfg;
    cfg.heads = 2;
    cfg.window = 2;
    cfg.alpha = 0.5;
    const std::size_t dd = 4, n = 4, dh = 2;
    auto wrng = make_stream(0, "verify/hilo/small");
    HiLoWeights w = init_hilo_weights(cfg, dd, wrng);
    Tensor xs = random_tensor({n, dd}, rng);
    Tensor got = hilo_attention(xs, cfg, w);

    std::vector<std::vector<double>> qh(n), kh(n), vh(n);
    for (std::size_t i = 0; i < n; ++i) {
      qh[i] = project(xs, i, w.w_qkv_high, w.b_qkv_high, 0, dh);
      kh[i] = project(xs, i, w.w_qkv_high, w.b_qkv_high, dh, dh);
      vh[i] = project(xs, i, w.w_qkv_high, w.b_qkv_high, 2 * dh, dh);
    }
    std::vector<double> mean(dd, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < dd; ++c) mean[c] += xs.at(i, c) / static_cast<double>(n);
    Tensor pooled({1, dd}, mean);
    const auto kl = project(pooled, 0, w.w_kv_low, w.b_kv_low, 0, dh);
    const auto vl = project(pooled, 0, w.w_kv_low, w.b_kv_low, dh, dh);

    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      auto hi = attend(qh[i], kh, vh);
      auto lo = attend(project(xs, i, w.w_q_low, w.b_q_low, 0, dh), {kl}, {vl});
      std::vector<double> cat = {hi[0], hi[1], lo[0], lo[1]};
      for (std::size_t c = 0; c < dd; ++c) {
        double acc = w.b_out[c];
        for (std::size_t k = 0; k < dd; ++k) acc += cat[k] * w.w_out.at(k, c);
        err = std::max(err, std::abs(acc - got.at(i, c)));
      }
    }
    out.push_back({"hilo.small_case_oracle", err <= 1e-9, fmt("max abs diff %.3g", err)});
  }
  {
    HiLoConfig cfg;
    cfg.heads = 4;
    cfg.window = 3;
    auto wrng = make_stream(0, "verify/hilo/split");
    HiLoWeights w = init_hilo_weights(cfg, d, wrng);
    const std::size_t dh = d / cfg.heads;
    const std::size_t high = w.w_qkv_high.extent(1) / 3, low = w.w_q_low.extent(1);
    const bool ok = high == cfg.high_heads() * dh && low == cfg.low_heads() * dh && high + low == d &&
                    hilo_attention(x, cfg, w).shape() == x.shape();
    out.push_back({"hilo.channel_split", ok,
                   "high " + std::to_string(high) + " + low " + std::to_string(low) + " of " + std::to_string(d)});
  }
  return out;
}

// ---------------------------------------------------------------- metrics

Results metrics_suite() {
  Results out;
  for (const auto& t : published_hiou_triples()) {
    const double got = hiou(t.seen, t.unseen);
    char buf[128];
    std::snprintf(buf, sizeof buf, "hiou(%.1f, %.1f) = %.3f, printed %.1f", t.seen, t.unseen, got, t.hiou);
    out.push_back({std::string("metrics.hiou.") + t.label, std::abs(got - t.hiou) <= 0.05, buf});
  }

  GzlssSplit split;
  split.seen = {0};
  split.unseen = {1};
  split.embeddings = Tensor({2, 1}, {1.0, -1.0});
  auto map = [](std::vector<std::uint8_t> v) { return LabelMap{4, 4, std::move(v)}; };
  {
    auto truth = map({0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1});
    SegMetrics m = compute_metrics(truth, truth, split);
    const bool ok = m.pAcc == 100.0 && m.mIoU_seen == 100.0 && m.mIoU_unseen == 100.0 && m.hIoU == 100.0;
    out.push_back({"metrics.perfect", ok, "pAcc " + fmt("%.2f", m.pAcc) + ", hIoU " + fmt("%.2f", m.hIoU)});
  }
  {
    auto truth = map(std::vector<std::uint8_t>(16, 0));
    auto pred = map(std::vector<std::uint8_t>(16, 1));
    SegMetrics m = compute_metrics(pred, truth, split);
    const bool ok = m.class_iou.at(0) == 0.0 && m.class_iou.at(1) == 0.0;
    out.push_back({"metrics.disjoint", ok, "IoU " + fmt("%.2f", m.class_iou.at(0))});
  }
  {
    // Class 1: truth covers 8 pixels, prediction 8, overlap 6.
    auto truth = map({1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0});
    auto pred = map({1, 1, 1, 1, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0});
    SegMetrics m = compute_metrics(pred, truth, split);
    const double iou = m.class_iou.at(1);
    out.push_back({"metrics.hand_count", std::abs(iou - 60.0) < 1e-12, "IoU " + fmt("%.4f", iou)});
  }
  return out;
}

}  // namespace

const std::vector<HiouTriple>& published_hiou_triples() {
  static const std::vector<HiouTriple> rows = {
      {"voc.SPNet", 78.0, 15.6, 26.1},           {"coco.SPNet", 35.2, 8.7, 14.0},
      {"voc.ZS3", 77.3, 17.7, 28.7},             {"coco.ZS3", 34.7, 9.5, 15.0},
      {"voc.CaGNet", 78.4, 26.6, 39.7},          {"coco.CaGNet", 33.5, 12.2, 18.2},
      {"voc.SIGN", 75.4, 28.9, 41.7},            {"coco.SIGN", 32.3, 15.5, 20.9},
      {"voc.Joint", 77.7, 32.5, 45.9},           {"voc.ZegFormer", 86.4, 63.6, 73.3},
      {"coco.ZegFormer", 36.6, 33.2, 34.8},      {"voc.ZSSeg", 83.5, 72.5, 77.5},
      {"coco.ZSSeg", 39.3, 36.3, 37.8},          {"voc.ZegCLIP", 91.9, 77.8, 84.3},
      {"coco.ZegCLIP", 40.2, 41.4, 40.8},        {"voc.proposed", 92.9, 87.4, 90.1},
      {"coco.proposed", 40.6, 43.8, 42.1},       {"voc.ZegCLIP_all", 92.4, 90.9, 91.6},
      {"coco.ZegCLIP_all", 40.7, 63.2, 49.6},    {"voc.proposed_all", 93.6, 92.9, 93.2},
      {"coco.proposed_all", 41.6, 66.0, 51.0},   {"voc.ablation.base", 91.9, 77.8, 84.3},
      {"voc.ablation.spt", 92.6, 86.7, 89.6},    {"voc.ablation.sgd", 92.0, 79.9, 85.5},
      {"voc.ablation.both", 92.9, 87.4, 90.1},
  };
  return rows;
}

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = {"fft", "grad", "hilo", "metrics", "all"};
  return names;
}

std::vector<PropertyResult> run_suite(const std::string& suite) {
  if (suite == "fft") return fft_suite();
  if (suite == "grad") return grad_suite();
  if (suite == "hilo") return hilo_suite();
  if (suite == "metrics") return metrics_suite();
  if (suite == "all") {
    Results all;
    for (auto* f : {&fft_suite, &grad_suite, &hilo_suite, &metrics_suite}) {
      auto part = f();
      all.insert(all.end(), part.begin(), part.end());
    }
    return all;
  }
  throw ContractError("unknown verify suite '" + suite + "' (expected fft, grad, hilo, metrics or all)");
}

}  // namespace sptseg
