// Command-line driver: gen-data, train, eval, verify, report.
//
// Exit codes
//   0  success
//   1  a verify property failed
//   2  configuration or usage error
//   3  I/O error or missing dataset
//   4  non-finite loss during training
//   5  corrupt or incompatible checkpoint
//   6  internal contract violation

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sptseg/checkpoint.hpp"
#include "sptseg/config.hpp"
#include "sptseg/dataset.hpp"
#include "sptseg/errors.hpp"
#include "sptseg/pipeline.hpp"
#include "sptseg/verify.hpp"

namespace fs = std::filesystem;
using namespace sptseg;

namespace {

enum Exit { kOk = 0, kVerifyFailed = 1, kConfig = 2, kIo = 3, kNonFinite = 4, kCheckpoint = 5, kInternal = 6 };

Config load_config(const std::string& path) { return path.empty() ? Config{} : load_config_file(path); }

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw IoError("cannot write " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.txt")) throw IoError("no dataset at " + dir.string() + " (manifest.txt missing)");
  return read_dataset(dir);
}

// The dataset's class lists must agree with what the config would generate.
void check_layout(const Config& cfg, const Dataset& ds) {
  const ClassLayout layout = ClassLayout::make(cfg.data);
  if (layout.seen != ds.seen || layout.unseen != ds.unseen) {
    throw ConfigError("dataset class split does not match the [data] section of the config");
  }
  if (ds.image_side != cfg.encoder.image_side) {
    throw ConfigError("dataset image side " + std::to_string(ds.image_side) + " differs from encoder.image_side " +
                      std::to_string(cfg.encoder.image_side));
  }
}

struct GenArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
};

int gen_data(const GenArgs& a) {
  Config cfg = load_config(a.config);
  SceneSpec spec;
  spec.seed = a.seed.value_or(cfg.train.seed);
  spec.image_side = cfg.encoder.image_side;
  spec.min_shapes = cfg.data.min_shapes;
  spec.max_shapes = cfg.data.max_shapes;
  spec.layout = ClassLayout::make(cfg.data);
  Dataset ds = generate_dataset(spec, cfg.data.n_train, cfg.data.n_test);
  write_dataset(a.out, ds);
  std::printf("train=%zu\ntest=%zu\nseen=%zu\nunseen=%zu\n", ds.train.size(), ds.test.size(), ds.seen.size(),
              ds.unseen.size());
  return kOk;
}

struct TrainArgs {
  std::string config, data, out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> ablate;
  bool f32 = false;
  std::size_t log_every = 100;
};

int train_cmd(const TrainArgs& a) {
  Config cfg = load_config(a.config);
  if (a.seed) cfg.train.seed = *a.seed;
  for (const auto& s : a.ablate) apply_ablation(cfg, s);
  cfg.validate();
  Dataset ds = load_dataset(a.data);
  check_layout(cfg, ds);
  ensure_dir(a.out);

  Model model = Model::init(cfg);
  const auto log = train(model, ds.train, [&](const LossRecord& r) {
    if (a.log_every && (r.step % a.log_every == 0 || r.step == 1)) {
      std::fprintf(stderr, "step %zu/%zu focal %.4f ssim %.4f total %.4f\n", r.step, cfg.train.steps, r.focal,
                   r.ssim, r.total);
    }
  });
  write_file(fs::path(a.out) / "checkpoint.bin",
             save_checkpoint(model.to_checkpoint(), a.f32 ? DType::kF32 : DType::kF64));
  spit(fs::path(a.out) / "loss.csv", loss_csv(log));
  const auto& last = log.back();
  std::printf("step=%zu focal=%.6f ssim=%.6f total=%.6f\n", last.step, last.focal, last.ssim, last.total);
  return kOk;
}

struct EvalArgs {
  std::string checkpoint, data, report, split = "test", classes = "all", dump;
  std::size_t workers = 1;
};

int eval_cmd(const EvalArgs& a) {
  Model model = Model::from_checkpoint(load_checkpoint(read_file(a.checkpoint)));
  Dataset ds = load_dataset(a.data);
  check_layout(model.config, ds);
  const auto& samples = a.split == "train" ? ds.train : ds.test;
  std::vector<int> subset = a.classes == "seen" ? model.split.seen : model.split.all();
  EvalResult r = evaluate(model, samples, subset, a.workers, !a.dump.empty());
  const std::string text = format_report(r.metrics);
  if (!a.report.empty()) spit(a.report, text);
  if (!a.dump.empty()) {
    ensure_dir(a.dump);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      std::string name = samples[i].name;
      std::replace(name.begin(), name.end(), '/', '_');
      write_label_map(fs::path(a.dump) / (name + ".pgm"), r.predictions[i]);
    }
  }
  std::fputs(text.c_str(), stdout);
  return kOk;
}

int verify_cmd(const std::string& suite) {
  const auto results = run_suite(suite);
  std::size_t failed = 0;
  for (const auto& r : results) {
    std::printf("%-4s  %-36s  %s\n", r.passed ? "PASS" : "FAIL", r.id.c_str(), r.detail.c_str());
    if (!r.passed) {
      ++failed;
      std::fprintf(stderr, "failed property: %s\n", r.id.c_str());
    }
  }
  std::printf("%zu/%zu properties passed\n", results.size() - failed, results.size());
  return failed ? kVerifyFailed : kOk;
}

int report_cmd(const std::string& loss, const std::string& report, const std::string& out) {
  const auto log = parse_loss_csv(slurp(loss));
  const auto metrics = report.empty() ? std::map<std::string, double>{} : parse_report(slurp(report));
  const std::string md = markdown_summary(log, metrics);
  if (out.empty()) {
    std::fputs(md.c_str(), stdout);
  } else {
    spit(out, md);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral-prompt zero-shot segmentation toolkit"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate the synthetic seen/unseen dataset");
  g->add_option("--config", gen.config, "Config file (defaults apply when omitted)")->check(CLI::ExistingFile);
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Dataset seed (defaults to train.seed)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train prompts and decoder; writes checkpoint.bin and loss.csv");
  t->add_option("--config", tr.config, "Config file")->check(CLI::ExistingFile);
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_option("--seed", tr.seed, "Overrides train.seed");
  t->add_option("--ablate", tr.ablate, "Ablation switch: spt=off or sgd=off (repeatable)");
  t->add_flag("--f32", tr.f32, "Store checkpoint payloads as 32-bit floats");
  t->add_option("--log-every", tr.log_every, "Progress line interval on stderr (0 = silent)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint; prints and writes the metrics report");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--report", ev.report, "Report output file");
  e->add_option("--split", ev.split, "Which split to score")->check(CLI::IsMember({"test", "train"}));
  e->add_option("--classes", ev.classes, "Prediction class subset")->check(CLI::IsMember({"all", "seen"}));
  e->add_option("--dump", ev.dump, "Directory for per-image predicted label maps (P5)");
  e->add_option("--workers", ev.workers, "Evaluation threads; results do not depend on it")
      ->check(CLI::PositiveNumber);

  std::string suite;
  auto* v = app.add_subcommand("verify", "Run oracle property suites");
  v->add_option("--suite", suite, "Suite name")->required()->check(CLI::IsMember(suite_names()));

  std::string loss, report, out;
  auto* r = app.add_subcommand("report", "Render a loss log and metrics report as markdown");
  r->add_option("--loss", loss, "Loss CSV")->required()->check(CLI::ExistingFile);
  r->add_option("--report", report, "Metrics report")->check(CLI::ExistingFile);
  r->add_option("--out", out, "Markdown output file (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*g) return gen_data(gen);
    if (*t) return train_cmd(tr);
    if (*e) return eval_cmd(ev);
    if (*v) return verify_cmd(suite);
    if (*r) return report_cmd(loss, report, out);
  } catch (const ConfigError& err) {
    std::fprintf(stderr, "config error: %s\n", err.what());
    return kConfig;
  } catch (const CheckpointError& err) {
    std::fprintf(stderr, "checkpoint error: %s\n", err.what());
    return kCheckpoint;
  } catch (const IoError& err) {
    std::fprintf(stderr, "i/o error: %s\n", err.what());
    return kIo;
  } catch (const NumericError& err) {
    std::fprintf(stderr, "numeric error: %s\n", err.what());
    return kNonFinite;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kInternal;
  }
  return kInternal;
}
