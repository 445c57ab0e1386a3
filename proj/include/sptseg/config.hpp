#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "sptseg/decoder.hpp"
#include "sptseg/encoder.hpp"
#include "sptseg/losses.hpp"

namespace sptseg {

struct DataConfig {
  std::size_t seen_classes = 6;  // includes background (class 0)
  std::size_t unseen_classes = 2;
  std::size_t n_train = 512;
  std::size_t n_test = 128;
  std::size_t min_shapes = 1;
  std::size_t max_shapes = 3;

  void validate() const;
};

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 8;
  double lr = 3e-3;
  // Cosine decay from lr down to lr * lr_final_ratio over `steps`; 1 keeps it flat.
  double lr_final_ratio = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-4;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  // Single-batch overfit mode: every step reuses the first `batch` samples.
  bool overfit = false;

  void validate() const;
};

/// Everything a run depends on. Sections map 1:1 onto the config file:
/// [encoder] [decoder] [loss] [train] [data].
struct Config {
  EncoderConfig encoder;
  HiLoConfig decoder;
  LossConfig loss;
  TrainConfig train;
  DataConfig data;

  void validate() const;
};

/// Parses INI-style text. Unknown sections, unknown keys and unparsable
/// values raise ConfigError naming the offending key. Missing keys keep
/// their defaults.
Config parse_config(const std::string& text);

/// Canonical text form; parse_config(serialize_config(c)) == c.
std::string serialize_config(const Config& cfg);

Config load_config_file(const std::filesystem::path& path);

bool operator==(const Config& a, const Config& b);

/// Applies a `key=value` override such as "spt=off" or "sgd=off".
void apply_ablation(Config& cfg, const std::string& assignment);

}  // namespace sptseg
