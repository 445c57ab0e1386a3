#include <doctest.h>

#include "oracles.hpp"
#include "sptseg/encoder.hpp"
#include "sptseg/errors.hpp"
#include "sptseg/nn.hpp"
#include "sptseg/rng.hpp"

using namespace sptseg;

namespace {

struct Fixture {
  EncoderConfig cfg;
  FrozenBackbone backbone;
  PromptParams prompts;
  std::vector<double> image;

  explicit Fixture(EncoderConfig c = {}, std::uint64_t seed = 0) : cfg(c) {
    auto rng = make_stream(seed, "enc");
    backbone = FrozenBackbone::init(cfg, rng);
    prompts = PromptParams::init(cfg, rng);
    image = oracle::values(oracle::random({cfg.image_side, cfg.image_side, 3}, seed + 1, 0.0, 1.0));
  }
};

std::vector<std::vector<double>> rows_of(const Tensor& t, std::size_t r0, std::size_t r1, std::size_t c0,
                                         std::size_t c1) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = r0; i < r1; ++i) {
    std::vector<double> r;
    for (std::size_t j = c0; j < c1; ++j) r.push_back(t.at(i, j));
    out.push_back(r);
  }
  return out;
}

}  // namespace

TEST_CASE("zero image embeds to position plus bias") {
  Fixture f;
  std::vector<double> black(f.image.size(), 0.0);
  TokenSequence seq = patch_embed(black, f.cfg, f.backbone, f.prompts);
  const std::size_t d = f.cfg.width;
  for (std::size_t n = 0; n < f.cfg.tokens(); ++n)
    for (std::size_t c = 0; c < d; ++c)
      CHECK(seq.H.at(n, c) == f.backbone.position.at(n, c) + f.backbone.patch_bias[c]);
  CHECK(oracle::values(seq.g) == oracle::values(f.backbone.cls));
}

TEST_CASE("encoder shapes at the default configuration") {
  Fixture f;
  TokenSequence seq = patch_embed(f.image, f.cfg, f.backbone, f.prompts);
  TokenSequence out = encoder_layer(1, seq, f.cfg, f.backbone.layers[0], &*f.prompts.filters[0]);
  CHECK(out.g.shape() == Shape{32});
  CHECK(out.V.shape() == Shape{4, 32});
  CHECK(out.H.shape() == Shape{144, 32});
  Encoded e = encode(f.image, f.cfg, f.backbone, f.prompts);
  CHECK(e.g.shape() == Shape{32});
  CHECK(e.H.shape() == Shape{144, 32});
}

TEST_CASE("encode is deterministic for a fixed seed") {
  Fixture a, b;
  Encoded ea = encode(a.image, a.cfg, a.backbone, a.prompts);
  Encoded eb = encode(b.image, b.cfg, b.backbone, b.prompts);
  CHECK(oracle::values(ea.H) == oracle::values(eb.H));
  CHECK(oracle::values(ea.g) == oracle::values(eb.g));
}

TEST_CASE("a zero filter reproduces the prompt-only layer bit for bit") {
  Fixture f;
  EncoderConfig plain = f.cfg;
  plain.spt_first = plain.spt_last = 0;
  TokenSequence seq = patch_embed(f.image, f.cfg, f.backbone, f.prompts);
  SpectralFilter zero = SpectralFilter::constant(f.cfg.grid(), f.cfg.width, 0.0, 0.0);
  TokenSequence with = encoder_layer(1, seq, f.cfg, f.backbone.layers[0], &zero);
  TokenSequence without = encoder_layer(1, seq, plain, f.backbone.layers[0], nullptr);
  CHECK(oracle::values(with.H) == oracle::values(without.H));
  CHECK(oracle::values(with.g) == oracle::values(without.g));
}

TEST_CASE("filter presence must match the configured range") {
  Fixture f;
  TokenSequence seq = patch_embed(f.image, f.cfg, f.backbone, f.prompts);
  CHECK_THROWS_AS(encoder_layer(1, seq, f.cfg, f.backbone.layers[0], nullptr), ContractError);
  CHECK_THROWS_AS(encoder_layer(3, seq, f.cfg, f.backbone.layers[2], &*f.prompts.filters[0]), ContractError);
  CHECK_THROWS_AS(encoder_layer(0, seq, f.cfg, f.backbone.layers[0], nullptr), ContractError);
}

TEST_CASE("spt-off prompts carry no filters") {
  EncoderConfig cfg;
  cfg.spt_first = cfg.spt_last = 0;
  Fixture f(cfg);
  for (const auto& w : f.prompts.filters) CHECK_FALSE(w.has_value());
  std::size_t named = 0;
  f.prompts.for_each_mut([&](const std::string& name, Tensor&) {
    CHECK(name.find(".w_f.") == std::string::npos);
    ++named;
  });
  CHECK(named == cfg.layers);
}

TEST_CASE("single-head attention matches the explicit formula") {
  Tensor q = oracle::random({4, 2}, 1), k = oracle::random({4, 2}, 2), v = oracle::random({4, 2}, 3);
  Tensor got = attention(q, k, v, 1);
  const auto want = oracle::attention(rows_of(q, 0, 4, 0, 2), rows_of(k, 0, 4, 0, 2), rows_of(v, 0, 4, 0, 2));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 2; ++c) CHECK(std::abs(got.at(i, c) - want[i][c]) < 1e-14);
}

TEST_CASE("blocked multi-head attention splits rows and channels") {
  // Two blocks of 3 rows, two heads of width 2.
  Tensor q = oracle::random({6, 4}, 4), k = oracle::random({6, 4}, 5), v = oracle::random({6, 4}, 6);
  Tensor got = attention(q, k, v, 2, 3, 3);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t h = 0; h < 2; ++h) {
      const std::size_t r0 = 3 * b, c0 = 2 * h;
      const auto want = oracle::attention(rows_of(q, r0, r0 + 3, c0, c0 + 2), rows_of(k, r0, r0 + 3, c0, c0 + 2),
                                          rows_of(v, r0, r0 + 3, c0, c0 + 2));
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t c = 0; c < 2; ++c) CHECK(std::abs(got.at(r0 + i, c0 + c) - want[i][c]) < 1e-14);
    }
}

TEST_CASE("attention gradients") {
  auto report = check_gradients(
      [](const std::vector<Tensor>& v) { return sum(mul(attention(v[0], v[1], v[2], 2, 3, 3), v[3])); },
      {oracle::random({6, 4}, 7), oracle::random({6, 4}, 8), oracle::random({6, 4}, 9), oracle::random({6, 4}, 10)});
  CHECK(report.passed(1e-6));
}

TEST_CASE("backbone stays frozen while prompts and filters learn") {
  Fixture f;
  Encoded e = encode(f.image, f.cfg, f.backbone, f.prompts);
  Tensor probe = oracle::random(e.H.shape(), 11);
  sum(mul(e.H, probe)).backward();
  f.backbone.for_each([](const std::string& name, const Tensor& t) {
    CAPTURE(name);
    CHECK_FALSE(t.requires_grad());
    CHECK_FALSE(t.has_grad());
  });
  f.prompts.for_each_mut([](const std::string& name, Tensor& t) {
    CAPTURE(name);
    REQUIRE(t.has_grad());
    double norm = 0.0;
    for (double g : t.grad()) norm += g * g;
    CHECK(norm > 0.0);
  });
}

TEST_CASE("configuration validation") {
  EncoderConfig c;
  c.patch = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.spt_last = 9;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.prompt_length = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  Fixture f;
  std::vector<double> small(10, 0.0);
  CHECK_THROWS_AS(patch_embed(small, f.cfg, f.backbone, f.prompts), DimensionError);
}
