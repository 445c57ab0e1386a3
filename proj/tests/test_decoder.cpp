#include <doctest.h>

#include "oracles.hpp"
#include "sptseg/decoder.hpp"
#include "sptseg/errors.hpp"
#include "sptseg/nn.hpp"
#include "sptseg/rng.hpp"

using namespace sptseg;

namespace {

HiLoConfig cfg_with(double alpha, std::size_t heads = 4, std::size_t window = 3) {
  HiLoConfig c;
  c.alpha = alpha;
  c.heads = heads;
  c.window = window;
  return c;
}

std::vector<std::vector<double>> to_rows(const std::vector<double>& flat, std::size_t cols) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < flat.size(); i += cols) out.emplace_back(flat.begin() + i, flat.begin() + i + cols);
  return out;
}

std::vector<double> cols(const std::vector<double>& flat, std::size_t width, std::size_t c0, std::size_t c1) {
  std::vector<double> out;
  for (std::size_t i = 0; i < flat.size(); i += width)
    for (std::size_t c = c0; c < c1; ++c) out.push_back(flat[i + c]);
  return out;
}

std::vector<double> add_bias(std::vector<double> x, const Tensor& b) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += b[i % b.size()];
  return x;
}

}  // namespace

TEST_CASE("window order lists tokens window by window") {
  const auto order = window_order(4, 2);
  CHECK(std::vector<std::size_t>(order.begin(), order.begin() + 8) == std::vector<std::size_t>{0, 1, 4, 5, 2, 3, 6, 7});
  CHECK_THROWS_AS(window_order(4, 3), DimensionError);

  Tensor pool = window_pool_matrix(4, 2);
  CHECK(pool.shape() == Shape{4, 16});
  for (std::size_t w = 0; w < 4; ++w) {
    double s = 0;
    for (std::size_t n = 0; n < 16; ++n) s += pool.at(w, n);
    CHECK(s == doctest::Approx(1.0));
  }
  CHECK(pool.at(0, 5) == 0.25);
  CHECK(pool.at(0, 2) == 0.0);
}

TEST_CASE("alpha = 1 is exactly windowed attention") {
  auto rng = make_stream(1, "hilo");
  HiLoConfig c = cfg_with(1.0);
  HiLoWeights w = init_hilo_weights(c, 32, rng);
  CHECK_FALSE(w.w_q_low.defined());
  Tensor x = oracle::random({144, 32}, 2);
  Tensor want = windowed_attention(x, 3, 4, w.w_qkv_high, w.b_qkv_high, w.w_out, w.b_out);
  CHECK(oracle::values(hilo_attention(x, c, w)) == oracle::values(want));
}

TEST_CASE("alpha = 0 is exactly pooled-key attention") {
  auto rng = make_stream(3, "hilo");
  HiLoConfig c = cfg_with(0.0);
  HiLoWeights w = init_hilo_weights(c, 32, rng);
  CHECK_FALSE(w.w_qkv_high.defined());
  Tensor x = oracle::random({144, 32}, 4);
  Tensor want = pooled_key_attention(x, 3, 4, w.w_q_low, w.b_q_low, w.w_kv_low, w.b_kv_low, w.w_out, w.b_out);
  CHECK(oracle::values(hilo_attention(x, c, w)) == oracle::values(want));
}

TEST_CASE("HiLo on a 2x2 grid matches a hand-built reference") {
  // One window covering the grid, one head per branch, head width 2.
  auto rng = make_stream(5, "hilo");
  HiLoConfig c = cfg_with(0.5, 2, 2);
  HiLoWeights w = init_hilo_weights(c, 4, rng);
  Tensor x = oracle::random({4, 4}, 6);
  const auto X = oracle::values(x);

  const auto qkv = add_bias(oracle::matmul(X, oracle::values(w.w_qkv_high), 4, 4, 6), w.b_qkv_high);
  const auto high = oracle::attention(to_rows(cols(qkv, 6, 0, 2), 2), to_rows(cols(qkv, 6, 2, 4), 2),
                                      to_rows(cols(qkv, 6, 4, 6), 2));

  std::vector<double> mean(4, 0.0);
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t c2 = 0; c2 < 4; ++c2) mean[c2] += X[n * 4 + c2] / 4.0;
  const auto q = add_bias(oracle::matmul(X, oracle::values(w.w_q_low), 4, 4, 2), w.b_q_low);
  const auto kv = add_bias(oracle::matmul(mean, oracle::values(w.w_kv_low), 1, 4, 4), w.b_kv_low);
  const auto low = oracle::attention(to_rows(q, 2), to_rows(cols(kv, 4, 0, 2), 2), to_rows(cols(kv, 4, 2, 4), 2));

  std::vector<double> merged;
  for (std::size_t n = 0; n < 4; ++n) {
    merged.insert(merged.end(), high[n].begin(), high[n].end());
    merged.insert(merged.end(), low[n].begin(), low[n].end());
  }
  const auto want = add_bias(oracle::matmul(merged, oracle::values(w.w_out), 4, 4, 4), w.b_out);
  CHECK(oracle::max_abs_diff(hilo_attention(x, c, w), want) < 1e-13);
}

TEST_CASE("HiLo heads split the output channels between branches") {
  auto rng = make_stream(7, "hilo");
  HiLoConfig c = cfg_with(0.5);
  HiLoWeights w = init_hilo_weights(c, 32, rng);
  CHECK(w.w_qkv_high.shape() == Shape{32, 48});
  CHECK(w.w_q_low.shape() == Shape{32, 16});
  CHECK(w.w_kv_low.shape() == Shape{32, 32});
  CHECK(c.high_heads() == 2);
  CHECK(c.low_heads() == 2);
  CHECK(hilo_attention(oracle::random({144, 32}, 8), c, w).shape() == Shape{144, 32});
}

TEST_CASE("HiLo config validation") {
  CHECK_THROWS_AS(cfg_with(0.3).validate(32, 12), ConfigError);
  CHECK_THROWS_AS(cfg_with(0.5, 4, 5).validate(32, 12), ConfigError);
  CHECK_THROWS_AS(cfg_with(0.5, 3).validate(32, 12), ConfigError);
  CHECK_THROWS_AS(cfg_with(1.5).validate(32, 12), ConfigError);
  CHECK_NOTHROW(cfg_with(0.25).validate(32, 12));
}

TEST_CASE("frequency selection gate cases") {
  const std::size_t d = 3;
  FreqSelectParams p{Tensor({d}, {1, 0, 0}), Tensor::eye(d)};
  Tensor z({4, d}, {2, 0, 0, -3, 0, 0, 0, 5, 0, 0, 0, 0});
  Tensor s = cosine_gate(z, p.xi);
  CHECK(s[0] == doctest::Approx(1.0));
  CHECK(s[1] == doctest::Approx(0.0));
  CHECK(s[2] == doctest::Approx(0.5));
  CHECK(s[3] == 0.0);
  Tensor out = freq_select(z, p);
  CHECK(out.at(0, 0) == doctest::Approx(2.0));
  CHECK(out.at(1, 0) == doctest::Approx(0.0));
  CHECK(out.at(2, 1) == doctest::Approx(2.5));

  FreqSelectParams zero{Tensor::zeros({d}), Tensor::eye(d)};
  CHECK_THROWS_AS(freq_select(z, zero), ContractError);
}

TEST_CASE("frequency selection with a general projection") {
  Tensor z = oracle::random({5, 4}, 9), xi = oracle::random({4}, 10), P = oracle::random({4, 4}, 11);
  Tensor got = freq_select(z, {xi, P});
  for (std::size_t j = 0; j < 5; ++j) {
    double dot = 0, nz = 0, nx = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      dot += z.at(j, c) * xi[c];
      nz += z.at(j, c) * z.at(j, c);
      nx += xi[c] * xi[c];
    }
    const double s = 0.5 * (dot / std::sqrt(nz * nx) + 1.0);
    for (std::size_t r = 0; r < 4; ++r) {
      double pz = 0;
      for (std::size_t c = 0; c < 4; ++c) pz += P.at(r, c) * z.at(j, c);
      CHECK(got.at(j, r) == doctest::Approx(s * pz).epsilon(1e-12));
    }
  }
  auto report = check_gradients(
      [](const std::vector<Tensor>& v) { return sum(mul(freq_select(v[0], {v[1], v[2]}), v[3])); },
      {z, xi, P, oracle::random({5, 4}, 12)});
  CHECK(report.passed(1e-6));
}

TEST_CASE("relationship descriptor cases") {
  const std::size_t d = 3;
  Tensor t = oracle::random({2, d}, 13);
  DescriptorParams p{oracle::random({2 * d, d}, 14), oracle::random({d}, 15)};

  Tensor g = oracle::random({d}, 16);
  std::vector<double> joined;
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t k = 0; k < d; ++k) joined.push_back(t.at(c, k) * g[k]);
    for (std::size_t k = 0; k < d; ++k) joined.push_back(t.at(c, k));
  }
  const auto want = add_bias(oracle::matmul(joined, oracle::values(p.weight), 2, 2 * d, d), p.bias);
  CHECK(oracle::max_abs_diff(relationship_descriptor(t, g, p), want) < 1e-14);

  // With g = 0 only the lower half of the weight contributes.
  Tensor lower = slice_rows(p.weight, d, 2 * d);
  const auto only_t = add_bias(oracle::matmul(oracle::values(t), oracle::values(lower), 2, d, d), p.bias);
  CHECK(oracle::max_abs_diff(relationship_descriptor(t, Tensor::zeros({d}), p), only_t) < 1e-14);

  CHECK_THROWS_AS(relationship_descriptor(t, Tensor::zeros({d + 1}), p), DimensionError);
}

TEST_CASE("decode composes the descriptor with the selected tokens") {
  auto rng = make_stream(17, "dec");
  HiLoConfig c;
  DecoderParams params = DecoderParams::init(c, 32, rng);
  Tensor H = oracle::random({144, 32}, 18), g = oracle::random({32}, 19), t = oracle::random({8, 32}, 20);
  Tensor masks = decode(H, g, t, c, params);
  CHECK(masks.shape() == Shape{8, 144});

  Tensor z = H;
  for (const auto& layer : params.layers) z = decode_layer(z, c, layer);
  const auto want = oracle::matmul(oracle::values(relationship_descriptor(t, g, params.descriptor)),
                                   oracle::values(transpose(z)), 8, 32, 144);
  CHECK(oracle::max_abs_diff(masks, want) < 1e-12);

  // Row c of the masks belongs to class c: swapping two embeddings swaps rows.
  Tensor swapped = concat_rows({slice_rows(t, 1, 2), slice_rows(t, 0, 1), slice_rows(t, 2, 8)});
  Tensor m2 = decode(H, g, swapped, c, params);
  for (std::size_t n = 0; n < 144; ++n) {
    CHECK(m2.at(0, n) == doctest::Approx(masks.at(1, n)).epsilon(1e-12));
    CHECK(m2.at(1, n) == doctest::Approx(masks.at(0, n)).epsilon(1e-12));
  }

  CHECK_THROWS_AS(decode(H, g, slice_rows(t, 0, 1), c, params), ContractError);
}

TEST_CASE("decoder without spectral guidance has no selection parameters") {
  auto rng = make_stream(21, "dec");
  HiLoConfig c;
  c.spectral_guided = false;
  DecoderParams params = DecoderParams::init(c, 32, rng);
  params.for_each_mut([](const std::string& name, Tensor&) {
    CHECK(name.find("select") == std::string::npos);
    CHECK(name.find("_low") == std::string::npos);
  });
  CHECK(decode(oracle::random({144, 32}, 22), oracle::random({32}, 23), oracle::random({3, 32}, 24), c, params)
            .shape() == Shape{3, 144});
}

TEST_CASE("predict: one-hot masks, ties and class subsets") {
  const std::size_t grid = 2, patch = 2;
  std::vector<double> m(6 * 4, 0.0);
  // Patch j is hot for class j + 1.
  for (std::size_t j = 0; j < 4; ++j) m[(j + 1) * 4 + j] = 1.0;
  Tensor masks({6, 4}, m);
  const std::vector<int> all{0, 1, 2, 3, 4, 5};
  LabelMap lm = predict(masks, all, grid, patch);
  CHECK(lm.height == 4);
  CHECK(lm.at(0, 0) == 1);
  CHECK(lm.at(1, 1) == 1);
  CHECK(lm.at(0, 2) == 2);
  CHECK(lm.at(3, 0) == 3);
  CHECK(lm.at(3, 3) == 4);

  Tensor flat = Tensor::zeros({6, 4});
  const std::vector<int> sub{5, 2};
  for (auto v : predict(flat, sub, grid, patch).labels) CHECK(v == 2);

  // Restricted argmax over {2, 5} only.
  Tensor r = oracle::random({6, 4}, 25);
  LabelMap got = predict(r, std::vector<int>{2, 5}, grid, 1);
  for (std::size_t j = 0; j < 4; ++j) CHECK(got.labels[j] == (r.at(5, j) > r.at(2, j) ? 5 : 2));

  CHECK_THROWS_AS(predict(r, std::vector<int>{}, grid, 1), ContractError);
  CHECK_THROWS_AS(predict(r, std::vector<int>{6}, grid, 1), ContractError);
}
