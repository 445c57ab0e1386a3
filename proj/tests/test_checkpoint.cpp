#include <doctest.h>

#include <zlib.h>

#include "oracles.hpp"
#include "sptseg/checkpoint.hpp"
#include "sptseg/errors.hpp"

using namespace sptseg;

namespace {

CheckpointData sample() {
  CheckpointData d;
  d.config_text = "[train]\nsteps = 3\n";
  d.tensors.push_back({"a.weight", oracle::random({3, 4}, 1)});
  d.tensors.push_back({"b.bias", oracle::random({5}, 2)});
  d.tensors.push_back({"c.cube", oracle::random({2, 2, 2}, 3)});
  return d;
}

}  // namespace

TEST_CASE("f64 round trip is exact") {
  auto d = sample();
  auto bytes = save_checkpoint(d);
  auto back = load_checkpoint(bytes);
  CHECK(back.config_text == d.config_text);
  REQUIRE(back.tensors.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.tensors[i].name == d.tensors[i].name);
    CHECK(back.tensors[i].value.shape() == d.tensors[i].value.shape());
    CHECK(oracle::values(back.tensors[i].value) == oracle::values(d.tensors[i].value));
  }
  CHECK(back.find("b.bias") != nullptr);
  CHECK(back.find("missing") == nullptr);
  CHECK(save_checkpoint(back) == bytes);
}

TEST_CASE("f32 round trip keeps single precision") {
  auto d = sample();
  auto back = load_checkpoint(save_checkpoint(d, DType::kF32));
  for (std::size_t i = 0; i < 3; ++i) {
    const auto want = oracle::values(d.tensors[i].value);
    const auto got = oracle::values(back.tensors[i].value);
    for (std::size_t k = 0; k < want.size(); ++k) CHECK(got[k] == static_cast<double>(static_cast<float>(want[k])));
  }
}

TEST_CASE("the trailer is the zlib CRC-32 of the body") {
  auto bytes = save_checkpoint(sample());
  const std::size_t body = bytes.size() - 4;
  const auto want = static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(body)));
  std::uint32_t stored = 0;
  for (int i = 3; i >= 0; --i) stored = (stored << 8) | bytes[body + static_cast<std::size_t>(i)];
  CHECK(stored == want);
  CHECK(crc32_of(std::span(bytes).first(body)) == want);
  const std::string check = "123456789";
  CHECK(crc32_of(std::span(reinterpret_cast<const std::uint8_t*>(check.data()), check.size())) == 0xCBF43926u);
}

TEST_CASE("any flipped byte is detected") {
  auto bytes = save_checkpoint(sample());
  for (std::size_t i = 0; i < bytes.size(); i += 7) {
    auto bad = bytes;
    bad[i] ^= 0x40;
    CAPTURE(i);
    CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
  }
}

TEST_CASE("truncation, empty tables and version mismatch") {
  auto bytes = save_checkpoint(sample());
  for (std::size_t n : {std::size_t{0}, std::size_t{4}, std::size_t{12}, bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(load_checkpoint(std::span(bytes).first(n)), CheckpointError);
  }

  CheckpointData empty;
  auto e = load_checkpoint(save_checkpoint(empty));
  CHECK(e.tensors.empty());
  CHECK(e.config_text.empty());

  // Bump the version field and re-seal the CRC so only the version is wrong.
  auto v2 = bytes;
  v2[8] = 2;
  const auto crc = crc32_of(std::span(v2).first(v2.size() - 4));
  for (int i = 0; i < 4; ++i) v2[v2.size() - 4 + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(crc >> (8 * i));
  try {
    load_checkpoint(v2);
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& err) {
    CHECK(std::string(err.what()).find("version") != std::string::npos);
  }
}

TEST_CASE("files on disk") {
  const auto path = std::filesystem::temp_directory_path() / "sptseg_ckpt_test.bin";
  auto bytes = save_checkpoint(sample());
  write_file(path, bytes);
  CHECK(read_file(path) == bytes);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_file(path), IoError);
}
