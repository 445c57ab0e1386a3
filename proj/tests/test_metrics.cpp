#include <doctest.h>

#include <set>

#include "oracles.hpp"
#include "sptseg/errors.hpp"
#include "sptseg/metrics.hpp"
#include "sptseg/verify.hpp"

using namespace sptseg;

namespace {

GzlssSplit split3() {
  // 0 and 1 seen, 2 unseen.
  return {{0, 1}, {2}, Tensor::eye(3)};
}

LabelMap map4(std::vector<std::uint8_t> v) { return {4, 4, std::move(v)}; }

}  // namespace

TEST_CASE("harmonic IoU cases") {
  CHECK(hiou(0, 0) == 0.0);
  CHECK(hiou(50, 50) == doctest::Approx(50.0));
  CHECK(hiou(100, 0) == 0.0);
  CHECK(hiou(80, 40) == doctest::Approx(2 * 80.0 * 40.0 / 120.0));
}

TEST_CASE("published harmonic IoU values within tolerance") {
  // Rows whose printed hIoU is not the harmonic mean of the printed mIoUs are
  // listed here and checked to really be inconsistent.
  const std::set<std::string> inconsistent{"voc.SPNet", "voc.ZS3",   "coco.ZS3",   "coco.CaGNet",      "voc.SIGN",
                                           "voc.Joint", "voc.ZSSeg", "coco.ZSSeg", "coco.ZegCLIP_all"};
  for (const auto& t : published_hiou_triples()) {
    CAPTURE(t.label);
    const double err = std::abs(hiou(t.seen, t.unseen) - t.hiou);
    if (inconsistent.count(t.label)) {
      CHECK(err > 0.05);
    } else {
      CHECK(err <= 0.05);
    }
  }
}

TEST_CASE("perfect and disjoint predictions") {
  auto split = split3();
  LabelMap truth = map4({0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 0, 0, 2, 2, 0, 0});
  SegMetrics perfect = compute_metrics(truth, truth, split);
  CHECK(perfect.pAcc == 100.0);
  CHECK(perfect.mIoU_seen == 100.0);
  CHECK(perfect.mIoU_unseen == 100.0);
  CHECK(perfect.hIoU == doctest::Approx(100.0));

  LabelMap shifted = truth;
  for (auto& v : shifted.labels) v = static_cast<std::uint8_t>((v + 1) % 3);
  SegMetrics none = compute_metrics(shifted, truth, split);
  CHECK(none.pAcc == 0.0);
  CHECK(none.mIoU_seen == 0.0);
  CHECK(none.mIoU_unseen == 0.0);
  CHECK(none.hIoU == 0.0);
}

TEST_CASE("hand-counted IoU on a 4x4 map") {
  // Class 1: truth 4 pixels, prediction 4 pixels, 3 shared -> 3 / 5.
  LabelMap truth = map4({1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0});
  LabelMap pred = map4({1, 1, 0, 0, 1, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0});
  SegMetrics m = compute_metrics(pred, truth, split3());
  CHECK(m.class_iou.at(1) == doctest::Approx(60.0));
  // Class 0: truth 12, prediction 12, shared 11 -> 11 / 13.
  CHECK(m.class_iou.at(0) == doctest::Approx(100.0 * 11 / 13));
  CHECK(m.pAcc == doctest::Approx(100.0 * 14 / 16));
  CHECK(m.class_iou.count(2) == 0);
  CHECK(m.mIoU_unseen == 0.0);
}

TEST_CASE("merged shards equal one pass over all images") {
  auto split = split3();
  std::mt19937_64 rng(3);
  std::vector<std::pair<LabelMap, LabelMap>> items;
  for (int i = 0; i < 6; ++i) {
    std::vector<std::uint8_t> a(16), b(16);
    for (auto& v : a) v = static_cast<std::uint8_t>(rng() % 3);
    for (auto& v : b) v = static_cast<std::uint8_t>(rng() % 3);
    items.emplace_back(map4(a), map4(b));
  }
  ConfusionMatrix whole(3), even(3), odd(3);
  for (std::size_t i = 0; i < items.size(); ++i) {
    whole.add(items[i].first, items[i].second);
    (i % 2 ? odd : even).add(items[i].first, items[i].second);
  }
  even.merge(odd);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t p = 0; p < 3; ++p) CHECK(even.count(t, p) == whole.count(t, p));
  CHECK(whole.total() == 96);
  CHECK(format_report(even.metrics(split)) == format_report(whole.metrics(split)));
}

TEST_CASE("report formatting and parsing") {
  SegMetrics m;
  m.pAcc = 91.234;
  m.mIoU_seen = 75.556;
  m.mIoU_unseen = 20.004;
  const std::string text = format_report(m);
  CHECK(text == "pAcc=91.23\nmIoU_seen=75.56\nmIoU_unseen=20.00\nhIoU=31.63\n");
  auto parsed = parse_report(text);
  CHECK(parsed.at("mIoU_seen") == 75.56);
  CHECK(parsed.at("hIoU") == 31.63);
  CHECK_THROWS_AS(parse_report("pAcc 1\n"), IoError);
  CHECK_THROWS_AS(parse_report("pAcc=x\n"), IoError);
}

TEST_CASE("split registry") {
  GzlssSplit s = split3();
  CHECK(s.is_seen(1));
  CHECK(s.is_unseen(2));
  CHECK_FALSE(s.registered(3));
  CHECK(s.all() == std::vector<int>{0, 1, 2});
  ConfusionMatrix cm(4);
  CHECK_THROWS_AS(cm.metrics(s), ContractError);
}
