#include "sptseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "sptseg/errors.hpp"
#include "sptseg/rng.hpp"

namespace sptseg {

namespace fs = std::filesystem;

const char* shape_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kCircle: return "circle";
    case ShapeKind::kSquare: return "square";
    case ShapeKind::kTriangle: return "triangle";
    case ShapeKind::kRing: return "ring";
    case ShapeKind::kStripes: return "stripes";
    case ShapeKind::kChecker: return "checker";
    case ShapeKind::kCross: return "cross";
    case ShapeKind::kDiamond: return "diamond";
  }
  return "?";
}

namespace {

const Rgb kBackground = {0.10, 0.10, 0.12};
const std::array<Rgb, 7> kPalette = {{
    {0.90, 0.15, 0.15},  // red
    {0.15, 0.25, 0.90},  // blue
    {0.15, 0.85, 0.20},  // green
    {0.95, 0.90, 0.15},  // yellow
    {0.85, 0.15, 0.85},  // magenta
    {0.15, 0.85, 0.85},  // cyan
    {0.95, 0.55, 0.10},  // orange
}};

constexpr double kPixelNoise = 0.04;
constexpr double kColorJitter = 0.05;

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

bool inside(ShapeKind kind, double dx, double dy, double r) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  switch (kind) {
    case ShapeKind::kCircle: return dx * dx + dy * dy <= r * r;
    case ShapeKind::kSquare: return ax <= 0.85 * r && ay <= 0.85 * r;
    case ShapeKind::kTriangle: {
      // Apex up, base at dy = +r.
      if (dy < -r || dy > r) return false;
      return ax <= (dy + r) * 0.5;
    }
    case ShapeKind::kRing: {
      const double d2 = dx * dx + dy * dy;
      return d2 <= r * r && d2 >= 0.3 * r * r;
    }
    case ShapeKind::kStripes: return ax <= r && ay <= 0.7 * r;
    case ShapeKind::kChecker: return ax <= 0.8 * r && ay <= 0.8 * r;
    case ShapeKind::kCross: return (ax <= 0.35 * r && ay <= r) || (ay <= 0.35 * r && ax <= r);
    case ShapeKind::kDiamond: return ax + ay <= r;
  }
  return false;
}

double texture(ShapeKind kind, std::size_t x, std::size_t y) {
  switch (kind) {
    case ShapeKind::kStripes: return (y / 3) % 2 ? 0.55 : 1.0;
    case ShapeKind::kChecker: return ((x / 3) + (y / 3)) % 2 ? 0.55 : 1.0;
    default: return 1.0;
  }
}

}  // namespace

ClassLayout ClassLayout::make(const DataConfig& data) {
  data.validate();
  const std::size_t shape_classes = data.seen_classes - 1 + data.unseen_classes;
  if (shape_classes > kShapeKinds) {
    throw ConfigError("data: " + std::to_string(shape_classes) + " shape classes but only " +
                      std::to_string(kShapeKinds) + " shape generators are registered");
  }
  if (data.seen_classes - 1 > kPalette.size()) throw ConfigError("data: too many seen classes for the palette");
  ClassLayout L;
  L.colors[kBackgroundClass] = kBackground;
  L.seen.push_back(kBackgroundClass);
  for (std::size_t k = 1; k < data.seen_classes; ++k) {
    const int id = static_cast<int>(k);
    L.seen.push_back(id);
    L.shapes[id] = static_cast<ShapeKind>(k - 1);
    L.colors[id] = kPalette[k - 1];
  }
  const std::size_t seen_shapes = data.seen_classes - 1;
  for (std::size_t k = 0; k < data.unseen_classes; ++k) {
    const int id = static_cast<int>(data.seen_classes + k);
    L.unseen.push_back(id);
    L.shapes[id] = static_cast<ShapeKind>(seen_shapes + k);
    int a = 1 + static_cast<int>((2 * k) % seen_shapes);
    int b = 1 + static_cast<int>((2 * k + 1) % seen_shapes);
    if (a == b) b = kBackgroundClass;
    L.parents[id] = {a, b};
    const Rgb& ca = L.colors[a];
    const Rgb& cb = L.colors[b];
    L.colors[id] = {0.5 * (ca[0] + cb[0]), 0.5 * (ca[1] + cb[1]), 0.5 * (ca[2] + cb[2])};
  }
  return L;
}

std::vector<double> Sample::image() const {
  std::vector<double> out(rgb.size());
  for (std::size_t i = 0; i < rgb.size(); ++i) out[i] = static_cast<double>(rgb[i]) / 255.0;
  return out;
}

void draw_shape(ShapeKind kind, double cx, double cy, double radius, int label, const Rgb& color,
                LabelMap& labels, std::vector<std::uint8_t>* rgb, std::mt19937_64* noise) {
  std::normal_distribution<double> pix(0.0, kPixelNoise);
  for (std::size_t y = 0; y < labels.height; ++y) {
    for (std::size_t x = 0; x < labels.width; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx;
      const double dy = static_cast<double>(y) + 0.5 - cy;
      if (!inside(kind, dx, dy, radius)) continue;
      labels.labels[y * labels.width + x] = static_cast<std::uint8_t>(label);
      if (!rgb) continue;
      const double t = texture(kind, x, y);
      for (std::size_t c = 0; c < 3; ++c) {
        const double n = noise ? pix(*noise) : 0.0;
        (*rgb)[(y * labels.width + x) * 3 + c] = to_byte(color[c] * t + n);
      }
    }
  }
}

Sample render_scene(const SceneSpec& spec, std::uint64_t image_seed, const std::vector<int>& allowed) {
  if (allowed.empty()) throw ConfigError("scene: no shape classes allowed");
  for (int c : allowed) {
    if (!spec.layout.shapes.count(c)) {
      throw ConfigError("scene: class " + std::to_string(c) + " has no registered shape generator");
    }
  }
  std::mt19937_64 rng(image_seed);
  const std::size_t side = spec.image_side;
  Sample s;
  s.seed = image_seed;
  s.labels.height = s.labels.width = side;
  s.labels.labels.assign(side * side, static_cast<std::uint8_t>(kBackgroundClass));
  s.rgb.resize(side * side * 3);
  std::normal_distribution<double> pix(0.0, kPixelNoise);
  for (std::size_t i = 0; i < side * side; ++i)
    for (std::size_t c = 0; c < 3; ++c) s.rgb[i * 3 + c] = to_byte(kBackground[c] + pix(rng));

  std::uniform_int_distribution<std::size_t> count(spec.min_shapes, spec.max_shapes);
  std::uniform_int_distribution<std::size_t> pick(0, allowed.size() - 1);
  std::uniform_real_distribution<double> radius_dist(9.0, 15.0);
  std::uniform_real_distribution<double> jitter(-kColorJitter, kColorJitter);
  const std::size_t n = count(rng);
  for (std::size_t k = 0; k < n; ++k) {
    const int cls = allowed[pick(rng)];
    const double r = radius_dist(rng);
    std::uniform_real_distribution<double> center(0.6 * r, static_cast<double>(side) - 0.6 * r);
    const double cx = center(rng), cy = center(rng);
    Rgb color = spec.layout.colors.at(cls);
    for (auto& v : color) v += jitter(rng);
    draw_shape(spec.layout.shapes.at(cls), cx, cy, r, cls, color, s.labels, &s.rgb, &rng);
  }
  std::set<int> present(s.labels.labels.begin(), s.labels.labels.end());
  s.classes_present.assign(present.begin(), present.end());
  return s;
}

Dataset generate_dataset(const SceneSpec& spec, std::size_t n_train, std::size_t n_test) {
  if (n_train == 0 || n_test == 0) throw ConfigError("dataset: n_train and n_test must be >= 1");
  Dataset ds;
  ds.seed = spec.seed;
  ds.image_side = spec.image_side;
  ds.seen = spec.layout.seen;
  ds.unseen = spec.layout.unseen;

  std::vector<int> seen_shapes, all_shapes;
  for (int c : spec.layout.seen)
    if (c != kBackgroundClass) seen_shapes.push_back(c);
  all_shapes = seen_shapes;
  all_shapes.insert(all_shapes.end(), spec.layout.unseen.begin(), spec.layout.unseen.end());

  auto seeds = make_stream(spec.seed, "data");
  char name[32];
  for (std::size_t i = 0; i < n_train; ++i) {
    Sample s = render_scene(spec, seeds(), seen_shapes);
    std::snprintf(name, sizeof name, "train/%04zu", i);
    s.name = name;
    ds.train.push_back(std::move(s));
  }
  for (std::size_t i = 0; i < n_test; ++i) {
    Sample s = render_scene(spec, seeds(), all_shapes);
    std::snprintf(name, sizeof name, "test/%04zu", i);
    s.name = name;
    ds.test.push_back(std::move(s));
  }
  return ds;
}

GzlssSplit make_split(const ClassLayout& layout, std::size_t width, std::mt19937_64& rng) {
  GzlssSplit split;
  split.seen = layout.seen;
  split.unseen = layout.unseen;
  const std::size_t classes = layout.seen.size() + layout.unseen.size();
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> t(classes * width);
  auto normalize = [&](std::size_t row) {
    double n = 0.0;
    for (std::size_t j = 0; j < width; ++j) n += t[row * width + j] * t[row * width + j];
    n = std::sqrt(n);
    for (std::size_t j = 0; j < width; ++j) t[row * width + j] /= n;
  };
  for (int c : layout.seen) {
    for (std::size_t j = 0; j < width; ++j) t[static_cast<std::size_t>(c) * width + j] = gauss(rng);
    normalize(static_cast<std::size_t>(c));
  }
  constexpr double kBlendNoise = 0.1;
  for (int c : layout.unseen) {
    const auto [a, b] = layout.parents.at(c);
    for (std::size_t j = 0; j < width; ++j) {
      t[static_cast<std::size_t>(c) * width + j] = 0.5 * t[static_cast<std::size_t>(a) * width + j] +
                                                    0.5 * t[static_cast<std::size_t>(b) * width + j] +
                                                    kBlendNoise * gauss(rng);
    }
    normalize(static_cast<std::size_t>(c));
  }
  split.embeddings = Tensor({classes, width}, std::move(t));
  split.validate();
  return split;
}

// Disk format ----------------------------------------------------------------

namespace {

void write_binary(const fs::path& path, const std::string& header, const std::vector<std::uint8_t>& payload) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << header;
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<std::uint8_t> read_pnm(const fs::path& path, const char* magic, std::size_t channels,
                                   std::size_t& side) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string m;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> m >> w >> h >> maxval;
  if (!in || m != magic || w != h || w == 0 || maxval != 255) throw IoError("bad image header in " + path.string());
  in.get();
  std::vector<std::uint8_t> data(w * h * channels);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (in.gcount() != static_cast<std::streamsize>(data.size())) throw IoError("truncated image " + path.string());
  side = w;
  return data;
}

std::string join(const std::vector<int>& v, char sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += sep;
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

void write_label_map(const fs::path& path, const LabelMap& labels) {
  const std::string header =
      "P5\n" + std::to_string(labels.width) + " " + std::to_string(labels.height) + "\n255\n";
  write_binary(path, header, labels.labels);
}

void write_dataset(const fs::path& dir, const Dataset& ds) {
  std::error_code ec;
  fs::create_directories(dir / "train", ec);
  fs::create_directories(dir / "test", ec);
  if (ec || !fs::is_directory(dir / "train") || !fs::is_directory(dir / "test")) {
    throw IoError("cannot create dataset directories under " + dir.string());
  }
  const std::string dims = std::to_string(ds.image_side) + " " + std::to_string(ds.image_side) + "\n255\n";
  std::ostringstream manifest;
  manifest << "# sptseg dataset v1\n"
           << "seed " << ds.seed << '\n'
           << "image_side " << ds.image_side << '\n'
           << "seen " << join(ds.seen, ' ') << '\n'
           << "unseen " << join(ds.unseen, ' ') << '\n';
  for (const auto* part : {&ds.train, &ds.test}) {
    for (const auto& s : *part) {
      write_binary(dir / (s.name + ".ppm"), "P6\n" + dims, s.rgb);
      write_binary(dir / (s.name + ".pgm"), "P5\n" + dims, s.labels.labels);
      manifest << s.name << ' ' << s.seed << ' ' << join(s.classes_present, ',') << '\n';
    }
  }
  std::ofstream out(dir / "manifest.txt", std::ios::binary);
  if (!out) throw IoError("cannot write manifest under " + dir.string());
  out << manifest.str();
}

Dataset read_dataset(const fs::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw IoError("no dataset manifest at " + (dir / "manifest.txt").string());
  Dataset ds;
  std::string line;
  auto ints = [](std::istringstream& is) {
    std::vector<int> v;
    int x;
    while (is >> x) v.push_back(x);
    return v;
  };
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string head;
    is >> head;
    if (head == "seed") {
      is >> ds.seed;
    } else if (head == "image_side") {
      is >> ds.image_side;
    } else if (head == "seen") {
      ds.seen = ints(is);
    } else if (head == "unseen") {
      ds.unseen = ints(is);
    } else {
      Sample s;
      s.name = head;
      std::string present;
      is >> s.seed >> present;
      if (!is) throw IoError("malformed manifest line: " + line);
      std::istringstream ps(present);
      std::string tok;
      while (std::getline(ps, tok, ',')) s.classes_present.push_back(std::stoi(tok));
      std::size_t side = 0;
      s.rgb = read_pnm(dir / (head + ".ppm"), "P6", 3, side);
      s.labels.labels = read_pnm(dir / (head + ".pgm"), "P5", 1, side);
      s.labels.height = s.labels.width = side;
      if (side != ds.image_side) throw IoError("image side mismatch in " + head);
      if (head.rfind("train/", 0) == 0) {
        ds.train.push_back(std::move(s));
      } else if (head.rfind("test/", 0) == 0) {
        ds.test.push_back(std::move(s));
      } else {
        throw IoError("manifest entry outside train/ or test/: " + head);
      }
    }
  }
  if (ds.image_side == 0 || ds.seen.empty()) throw IoError("manifest missing header fields");
  return ds;
}

}  // namespace sptseg
