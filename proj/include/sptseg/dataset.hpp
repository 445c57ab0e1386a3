#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "sptseg/config.hpp"
#include "sptseg/decoder.hpp"
#include "sptseg/metrics.hpp"

namespace sptseg {

enum class ShapeKind { kCircle, kSquare, kTriangle, kRing, kStripes, kChecker, kCross, kDiamond };

inline constexpr std::size_t kShapeKinds = 8;
inline constexpr int kBackgroundClass = 0;

const char* shape_name(ShapeKind kind);

using Rgb = std::array<double, 3>;

/// Seen classes come first (0 = background, then one shape class per id);
/// unseen classes follow. Unseen class k is visually and semantically
/// "between" two seen shape classes, its parents.
struct ClassLayout {
  std::vector<int> seen;
  std::vector<int> unseen;
  std::map<int, ShapeKind> shapes;              // every non-background class
  std::map<int, Rgb> colors;                    // every class
  std::map<int, std::array<int, 2>> parents;    // unseen classes only

  static ClassLayout make(const DataConfig& data);
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::size_t image_side = 48;
  std::size_t min_shapes = 1;
  std::size_t max_shapes = 3;
  ClassLayout layout;
};

struct Sample {
  std::string name;  // e.g. "train/0003"
  std::uint64_t seed = 0;
  std::vector<std::uint8_t> rgb;  // side x side x 3
  LabelMap labels;
  std::vector<int> classes_present;

  /// Pixels scaled to [0, 1].
  std::vector<double> image() const;
};

struct Dataset {
  std::uint64_t seed = 0;
  std::size_t image_side = 0;
  std::vector<int> seen;
  std::vector<int> unseen;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

/// Paints one shape's label into `labels` (and its texture into `rgb` when
/// non-null). Shape extent is governed by `radius` in pixels.
void draw_shape(ShapeKind kind, double cx, double cy, double radius, int label, const Rgb& color,
                LabelMap& labels, std::vector<std::uint8_t>* rgb, std::mt19937_64* noise);

/// One image from its own seed. `allowed` lists the shape classes it may use.
Sample render_scene(const SceneSpec& spec, std::uint64_t image_seed, const std::vector<int>& allowed);

/// Training images use seen shape classes only; test images draw from seen
/// and unseen. Identical specs yield byte-identical datasets.
Dataset generate_dataset(const SceneSpec& spec, std::size_t n_train, std::size_t n_test);

/// Frozen unit-norm class embeddings. Seen rows are Gaussian; each unseen row
/// is a normalized blend of its two parents plus noise.
GzlssSplit make_split(const ClassLayout& layout, std::size_t width, std::mt19937_64& rng);

/// Writes train/ and test/ (P6 images, P5 label maps) plus manifest.txt.
void write_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& dir);

/// Single-channel P5 dump of class ids.
void write_label_map(const std::filesystem::path& path, const LabelMap& labels);

}  // namespace sptseg
