#include "sptseg/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <vector>

#include "sptseg/errors.hpp"

namespace sptseg {

void DataConfig::validate() const {
  if (seen_classes < 2) throw ConfigError("data: need background plus at least one seen shape class");
  if (n_train == 0 || n_test == 0) throw ConfigError("data: n_train and n_test must be >= 1");
  if (min_shapes == 0 || min_shapes > max_shapes) throw ConfigError("data: need 1 <= min_shapes <= max_shapes");
}

void TrainConfig::validate() const {
  if (steps == 0 || batch == 0) throw ConfigError("train: steps and batch must be positive");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (!(lr_final_ratio >= 0.0 && lr_final_ratio <= 1.0)) throw ConfigError("train: lr_final_ratio must lie in [0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must lie in [0, 1)");
  if (weight_decay < 0.0 || !(eps > 0.0)) throw ConfigError("train: bad weight_decay/eps");
}

void Config::validate() const {
  encoder.validate();
  decoder.validate(encoder.width, encoder.grid());
  loss.validate();
  train.validate();
  data.validate();
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t parse_size(const std::string& key, const std::string& s) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("config: bad integer for '" + key + "': " + s);
  return v;
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("config: bad number for '" + key + "': " + s);
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "on" || s == "1") return true;
  if (s == "false" || s == "off" || s == "0") return false;
  throw ConfigError("config: bad boolean for '" + key + "': " + s);
}

struct Field {
  const char* section;
  const char* key;
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string&)> set;
};

#define SIZE_FIELD(sec, member, name)                                                 \
  Field {                                                                             \
    sec, name, [](const Config& c) { return std::to_string(c.member); },              \
        [](Config& c, const std::string& v) { c.member = parse_size(name, v); }       \
  }
#define DOUBLE_FIELD(sec, member, name)                                               \
  Field {                                                                             \
    sec, name, [](const Config& c) { return fmt_double(c.member); },                  \
        [](Config& c, const std::string& v) { c.member = parse_double(name, v); }     \
  }
#define BOOL_FIELD(sec, member, name)                                                 \
  Field {                                                                             \
    sec, name, [](const Config& c) { return std::string(c.member ? "true" : "false"); }, \
        [](Config& c, const std::string& v) { c.member = parse_bool(name, v); }       \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      SIZE_FIELD("encoder", encoder.layers, "layers"),
      SIZE_FIELD("encoder", encoder.width, "width"),
      SIZE_FIELD("encoder", encoder.heads, "heads"),
      SIZE_FIELD("encoder", encoder.patch, "patch"),
      SIZE_FIELD("encoder", encoder.image_side, "image_side"),
      SIZE_FIELD("encoder", encoder.prompt_length, "prompt_length"),
      SIZE_FIELD("encoder", encoder.mlp_ratio, "mlp_ratio"),
      Field{"encoder", "spt_range",
            [](const Config& c) {
              if (!c.encoder.spt_enabled()) return std::string("none");
              return std::to_string(c.encoder.spt_first) + "-" + std::to_string(c.encoder.spt_last);
            },
            [](Config& c, const std::string& v) {
              if (v == "none") {
                c.encoder.spt_first = c.encoder.spt_last = 0;
                return;
              }
              const auto dash = v.find('-');
              if (dash == std::string::npos) throw ConfigError("config: spt_range must be 'a-b' or 'none', got " + v);
              c.encoder.spt_first = parse_size("spt_range", v.substr(0, dash));
              c.encoder.spt_last = parse_size("spt_range", v.substr(dash + 1));
              if (c.encoder.spt_first == 0) throw ConfigError("config: spt_range layers are 1-based");
            }},
      SIZE_FIELD("decoder", decoder.heads, "heads"),
      DOUBLE_FIELD("decoder", decoder.alpha, "alpha"),
      SIZE_FIELD("decoder", decoder.window, "window"),
      SIZE_FIELD("decoder", decoder.layers, "layers"),
      SIZE_FIELD("decoder", decoder.mlp_ratio, "mlp_ratio"),
      BOOL_FIELD("decoder", decoder.spectral_guided, "spectral_guided"),
      DOUBLE_FIELD("loss", loss.focal_weight, "focal_weight"),
      DOUBLE_FIELD("loss", loss.ssim_weight, "ssim_weight"),
      DOUBLE_FIELD("loss", loss.focal_gamma, "focal_gamma"),
      SIZE_FIELD("loss", loss.ssim_window, "ssim_window"),
      DOUBLE_FIELD("loss", loss.ssim_c1, "ssim_c1"),
      DOUBLE_FIELD("loss", loss.ssim_c2, "ssim_c2"),
      SIZE_FIELD("train", train.steps, "steps"),
      SIZE_FIELD("train", train.batch, "batch"),
      DOUBLE_FIELD("train", train.lr, "lr"),
      DOUBLE_FIELD("train", train.lr_final_ratio, "lr_final_ratio"),
      DOUBLE_FIELD("train", train.beta1, "beta1"),
      DOUBLE_FIELD("train", train.beta2, "beta2"),
      DOUBLE_FIELD("train", train.weight_decay, "weight_decay"),
      DOUBLE_FIELD("train", train.eps, "eps"),
      SIZE_FIELD("train", train.seed, "seed"),
      BOOL_FIELD("train", train.overfit, "overfit"),
      SIZE_FIELD("data", data.seen_classes, "seen_classes"),
      SIZE_FIELD("data", data.unseen_classes, "unseen_classes"),
      SIZE_FIELD("data", data.n_train, "n_train"),
      SIZE_FIELD("data", data.n_test, "n_test"),
      SIZE_FIELD("data", data.min_shapes, "min_shapes"),
      SIZE_FIELD("data", data.max_shapes, "max_shapes"),
  };
  return table;
}

#undef SIZE_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields()) {
    if (section == f.section && key == f.key) return &f;
  }
  return nullptr;
}

}  // namespace

Config parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::ini_parser::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  static const std::set<std::string> sections = {"encoder", "decoder", "loss", "train", "data"};
  Config cfg;
  for (const auto& [section, body] : tree) {
    if (!sections.count(section)) {
      if (body.empty()) throw ConfigError("config: key '" + section + "' outside any section");
      throw ConfigError("config: unknown section [" + section + "]");
    }
    for (const auto& [key, value] : body) {
      const Field* f = find_field(section, key);
      if (!f) throw ConfigError("config: unknown key '" + section + "." + key + "'");
      f->set(cfg, value.get_value<std::string>());
    }
  }
  return cfg;
}

std::string serialize_config(const Config& cfg) {
  std::ostringstream os;
  std::string current;
  for (const auto& f : fields()) {
    if (current != f.section) {
      if (!current.empty()) os << '\n';
      current = f.section;
      os << '[' << current << "]\n";
    }
    os << f.key << " = " << f.get(cfg) << '\n';
  }
  return os.str();
}

Config load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

bool operator==(const Config& a, const Config& b) { return serialize_config(a) == serialize_config(b); }

void apply_ablation(Config& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("ablation must be key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const bool on = parse_bool(key, assignment.substr(eq + 1));
  if (key == "spt") {
    if (on) {
      if (!cfg.encoder.spt_enabled()) cfg.encoder.spt_first = 1, cfg.encoder.spt_last = std::min<std::size_t>(2, cfg.encoder.layers);
    } else {
      cfg.encoder.spt_first = cfg.encoder.spt_last = 0;
    }
  } else if (key == "sgd") {
    cfg.decoder.spectral_guided = on;
  } else {
    throw ConfigError("unknown ablation '" + key + "' (expected spt or sgd)");
  }
}

}  // namespace sptseg
