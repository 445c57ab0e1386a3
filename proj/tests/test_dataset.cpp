#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "sptseg/dataset.hpp"
#include "sptseg/errors.hpp"
#include "sptseg/rng.hpp"

using namespace sptseg;

namespace {

SceneSpec spec_with(std::uint64_t seed) {
  SceneSpec s;
  s.seed = seed;
  s.layout = ClassLayout::make(DataConfig{});
  return s;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("default layout: background plus five seen shapes, two unseen") {
  ClassLayout L = ClassLayout::make(DataConfig{});
  CHECK(L.seen == std::vector<int>{0, 1, 2, 3, 4, 5});
  CHECK(L.unseen == std::vector<int>{6, 7});
  CHECK(L.shapes.size() == 7);
  CHECK(L.parents.at(6) == std::array<int, 2>{1, 2});
  CHECK(L.parents.at(7) == std::array<int, 2>{3, 4});
  DataConfig too_many;
  too_many.unseen_classes = 4;
  CHECK_THROWS_AS(ClassLayout::make(too_many), ConfigError);
}

TEST_CASE("the same seed gives byte-identical datasets") {
  Dataset a = generate_dataset(spec_with(7), 6, 4);
  Dataset b = generate_dataset(spec_with(7), 6, 4);
  REQUIRE(a.train.size() == 6);
  REQUIRE(a.test.size() == 4);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(a.train[i].rgb == b.train[i].rgb);
    CHECK(a.train[i].labels.labels == b.train[i].labels.labels);
  }
  Dataset c = generate_dataset(spec_with(8), 6, 4);
  CHECK(a.train[0].rgb != c.train[0].rgb);
}

TEST_CASE("training images never contain unseen labels") {
  Dataset ds = generate_dataset(spec_with(1), 64, 64);
  for (const auto& s : ds.train)
    for (auto v : s.labels.labels) CHECK_FALSE((v == 6 || v == 7));
  std::size_t unseen_pixels = 0;
  for (const auto& s : ds.test)
    for (auto v : s.labels.labels) unseen_pixels += (v >= 6);
  CHECK(unseen_pixels > 0);
}

TEST_CASE("classes_present lists exactly the labels on the map") {
  Dataset ds = generate_dataset(spec_with(2), 8, 8);
  for (const auto& s : ds.test) {
    std::set<int> on_map(s.labels.labels.begin(), s.labels.labels.end());
    CHECK(std::vector<int>(on_map.begin(), on_map.end()) == s.classes_present);
  }
}

TEST_CASE("circle area within four percent of pi r^2") {
  for (double r : {6.0, 10.0, 17.0}) {
    LabelMap m{64, 64, std::vector<std::uint8_t>(64 * 64, 0)};
    draw_shape(ShapeKind::kCircle, 32, 32, r, 3, Rgb{1, 0, 0}, m, nullptr, nullptr);
    double area = 0;
    for (auto v : m.labels) area += (v == 3);
    CHECK(std::abs(area / (std::numbers::pi * r * r) - 1.0) < 0.04);
  }
}

TEST_CASE("disk round trip preserves pixels and labels") {
  Dataset ds = generate_dataset(spec_with(3), 3, 2);
  auto dir = scratch("sptseg_ds_test");
  write_dataset(dir, ds);
  Dataset back = read_dataset(dir);
  CHECK(back.seed == ds.seed);
  CHECK(back.image_side == ds.image_side);
  CHECK(back.seen == ds.seen);
  CHECK(back.unseen == ds.unseen);
  REQUIRE(back.test.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.test[i].name == ds.test[i].name);
    CHECK(back.test[i].rgb == ds.test[i].rgb);
    CHECK(back.test[i].labels.labels == ds.test[i].labels.labels);
  }
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(read_dataset(dir), IoError);
}

TEST_CASE("unseen embeddings sit between their parents") {
  ClassLayout L = ClassLayout::make(DataConfig{});
  auto rng = make_stream(0, "emb");
  GzlssSplit split = make_split(L, 32, rng);
  CHECK(split.embeddings.shape() == Shape{8, 32});
  auto dot = [&](int a, int b) {
    double s = 0;
    for (std::size_t k = 0; k < 32; ++k) s += split.embeddings.at(a, k) * split.embeddings.at(b, k);
    return s;
  };
  for (int c = 0; c < 8; ++c) CHECK(dot(c, c) == doctest::Approx(1.0));
  CHECK(dot(6, 1) > dot(6, 3));
  CHECK(dot(6, 2) > dot(6, 4));
  CHECK(dot(7, 3) > dot(7, 1));
  CHECK(dot(7, 4) > dot(7, 2));
}
