#include "sptseg/pipeline.hpp"

#include <cmath>
#include <numbers>
#include <cstdio>
#include <cstring>
#include <sstream>
#include <thread>

#include "sptseg/errors.hpp"
#include "sptseg/rng.hpp"

namespace sptseg {

Model Model::init(const Config& config) {
  config.validate();
  Model m;
  m.config = config;
  const auto seed = config.train.seed;
  auto backbone_rng = make_stream(seed, "init/backbone");
  auto prompt_rng = make_stream(seed, "init/prompts");
  auto decoder_rng = make_stream(seed, "init/decoder");
  auto embed_rng = make_stream(seed, "init/embeddings");
  m.backbone = FrozenBackbone::init(config.encoder, backbone_rng);
  m.prompts = PromptParams::init(config.encoder, prompt_rng);
  m.decoder = DecoderParams::init(config.decoder, config.encoder.width, decoder_rng);
  m.split = make_split(ClassLayout::make(config.data), config.encoder.width, embed_rng);
  return m;
}

Tensor Model::forward(std::span<const double> image) const {
  Encoded enc = encode(image, config.encoder, backbone, prompts);
  return decode(enc.H, enc.g, split.embeddings, config.decoder, decoder);
}

std::vector<Tensor> Model::trainable() {
  std::vector<Tensor> out;
  prompts.for_each_mut([&](const std::string&, Tensor& t) { out.push_back(t); });
  decoder.for_each_mut([&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

std::vector<NamedTensor> Model::named_tensors() {
  std::vector<NamedTensor> out;
  auto add = [&](const std::string& name, Tensor& t) { out.push_back({name, t}); };
  backbone.for_each_mut(add);
  out.push_back({"split.embeddings", split.embeddings});
  prompts.for_each_mut(add);
  decoder.for_each_mut(add);
  return out;
}

CheckpointData Model::to_checkpoint() {
  return {serialize_config(config), named_tensors()};
}

Model Model::from_checkpoint(const CheckpointData& data) {
  Config cfg;
  try {
    cfg = parse_config(data.config_text);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }
  Model m = Model::init(cfg);
  std::size_t matched = 0;
  auto restore = [&](const std::string& name, Tensor& t) {
    const Tensor* src = data.find(name);
    if (!src) throw CheckpointError("checkpoint lacks tensor " + name);
    if (src->shape() != t.shape()) {
      throw CheckpointError("checkpoint tensor " + name + " has shape " + shape_str(src->shape()) + ", expected " +
                            shape_str(t.shape()));
    }
    t = src->detach(t.requires_grad());
    ++matched;
  };
  m.backbone.for_each_mut(restore);
  restore("split.embeddings", m.split.embeddings);
  m.prompts.for_each_mut(restore);
  m.decoder.for_each_mut(restore);
  if (matched != data.tensors.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(data.tensors.size() - matched) +
                          " tensors the config does not describe");
  }
  return m;
}

std::uint64_t backbone_hash(Model& model) {
  std::uint64_t h = 1469598103934665603ULL;
  model.backbone.for_each_mut([&](const std::string& name, Tensor& t) {
    for (unsigned char c : name) h = (h ^ c) * 1099511628211ULL;
    for (double v : t.data()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof v);
      for (unsigned char c : bytes) h = (h ^ c) * 1099511628211ULL;
    }
  });
  return h;
}

std::vector<int> loss_target(const LabelMap& labels, const GzlssSplit& split) {
  std::vector<int> row_of(split.classes(), kIgnoreLabel);
  for (std::size_t i = 0; i < split.seen.size(); ++i) row_of[static_cast<std::size_t>(split.seen[i])] = static_cast<int>(i);
  std::vector<int> out(labels.labels.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t c = labels.labels[i];
    if (c >= row_of.size()) throw ContractError("loss_target: unregistered label " + std::to_string(c));
    out[i] = row_of[c];
  }
  return out;
}

namespace {

Tensor select_rows(const Tensor& x, const std::vector<int>& rows) {
  const std::size_t n = x.extent(1);
  std::vector<std::size_t> idx;
  idx.reserve(rows.size() * n);
  for (int r : rows)
    for (std::size_t j = 0; j < n; ++j) idx.push_back(static_cast<std::size_t>(r) * n + j);
  return gather(x, std::move(idx), {rows.size(), n});
}

}  // namespace

LossTerms sample_loss(const Model& model, const Sample& sample) {
  const auto& enc = model.config.encoder;
  Tensor masks = model.forward(sample.image());
  Tensor probs = softmax(select_rows(masks, model.split.seen), 0);
  Tensor pixels = upsample_bilinear(probs, enc.grid(), enc.patch);
  const auto target = loss_target(sample.labels, model.split);
  return total_loss(pixels, target, sample.labels.height, sample.labels.width, model.config.loss);
}

AdamW::AdamW(std::vector<Tensor> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) continue;
    auto w = p.mutable_data();
    auto g = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
      w[i] -= lr * (update + cfg_.weight_decay * w[i]);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double learning_rate(const TrainConfig& cfg, std::size_t step) {
  if (cfg.steps <= 1) return cfg.lr;
  const double progress = static_cast<double>(step - 1) / static_cast<double>(cfg.steps - 1);
  const double floor = cfg.lr * cfg.lr_final_ratio;
  return floor + (cfg.lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::vector<LossRecord> train(Model& model, const std::vector<Sample>& train_set, const StepCallback& on_step) {
  const auto& cfg = model.config.train;
  if (train_set.empty()) throw ContractError("train: empty training set");
  for (const auto& s : train_set) {
    for (auto c : s.labels.labels) {
      if (model.split.is_unseen(c)) {
        throw ContractError("train: sample " + s.name + " carries unseen class " + std::to_string(c));
      }
    }
  }
  AdamW opt(model.trainable(), cfg);
  auto rng = make_stream(cfg.seed, "train");
  std::uniform_int_distribution<std::size_t> pick(0, train_set.size() - 1);
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch);

  std::vector<LossRecord> log;
  log.reserve(cfg.steps);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    LossRecord rec;
    rec.step = step;
    opt.zero_grad();
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const Sample& s = cfg.overfit ? train_set[b % train_set.size()] : train_set[pick(rng)];
      try {
        LossTerms terms = sample_loss(model, s);
        mul(terms.total, inv_batch).backward();
        rec.focal += terms.focal.item() * inv_batch;
        rec.ssim += terms.ssim.item() * inv_batch;
        rec.total += terms.total.item() * inv_batch;
      } catch (const NumericError& e) {
        throw NumericError("step " + std::to_string(step) + ", sample " + s.name + ": " + e.what());
      }
    }
    for (const auto& [name, v] : {std::pair{"focal", rec.focal}, {"ssim", rec.ssim}, {"total", rec.total}}) {
      if (!std::isfinite(v)) throw NumericError("step " + std::to_string(step) + ": non-finite " + name + " loss");
    }
    opt.step(learning_rate(cfg, step));
    log.push_back(rec);
    if (on_step) on_step(rec);
  }
  return log;
}

std::string loss_csv(const std::vector<LossRecord>& log) {
  std::ostringstream os;
  os << "step,focal,ssim,total\n";
  char buf[128];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.10f,%.10f,%.10f\n", r.step, r.focal, r.ssim, r.total);
    os << buf;
  }
  return os.str();
}

std::vector<LossRecord> parse_loss_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "step,focal,ssim,total") throw IoError("loss log: missing CSV header");
  std::vector<LossRecord> log;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    LossRecord r;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf%c", &r.step, &r.focal, &r.ssim, &r.total, &tail) != 4) {
      throw IoError("loss log: malformed row at line " + std::to_string(lineno));
    }
    log.push_back(r);
  }
  return log;
}

std::vector<double> windowed_means(const std::vector<LossRecord>& log, std::size_t window) {
  std::vector<double> out;
  if (window == 0) return out;
  for (std::size_t start = 0; start + window <= log.size(); start += window) {
    double acc = 0.0;
    for (std::size_t i = start; i < start + window; ++i) acc += log[i].total;
    out.push_back(acc / static_cast<double>(window));
  }
  return out;
}

std::string markdown_summary(const std::vector<LossRecord>& log, const std::map<std::string, double>& report) {
  std::ostringstream os;
  char buf[160];
  os << "# Run summary\n\n## Metrics\n\n| metric | value |\n|---|---|\n";
  for (const char* key : {"pAcc", "mIoU_seen", "mIoU_unseen", "hIoU"}) {
    auto it = report.find(key);
    if (it == report.end()) continue;
    std::snprintf(buf, sizeof buf, "| %s | %.2f |\n", key, it->second);
    os << buf;
  }
  os << "\n## Training loss\n\n";
  if (log.empty()) {
    os << "No steps recorded.\n";
    return os.str();
  }
  const auto& first = log.front();
  const auto& last = log.back();
  os << "| step | focal | ssim | total |\n|---|---|---|---|\n";
  for (const auto* r : {&first, &last}) {
    std::snprintf(buf, sizeof buf, "| %zu | %.4f | %.4f | %.4f |\n", r->step, r->focal, r->ssim, r->total);
    os << buf;
  }
  const std::size_t window = std::max<std::size_t>(1, log.size() >= 2000 ? 200 : log.size() / 10);
  const auto means = windowed_means(log, window);
  if (!means.empty()) {
    os << "\nMean total loss per " << window << "-step window:\n\n| window | mean |\n|---|---|\n";
    for (std::size_t i = 0; i < means.size(); ++i) {
      std::snprintf(buf, sizeof buf, "| %zu-%zu | %.4f |\n", i * window + 1, (i + 1) * window, means[i]);
      os << buf;
    }
  }
  return os.str();
}

EvalResult evaluate(const Model& model, const std::vector<Sample>& samples, std::vector<int> class_subset,
                    std::size_t workers, bool keep_predictions) {
  if (class_subset.empty()) class_subset = model.split.all();
  const auto& enc = model.config.encoder;
  for (const auto& s : samples) {
    for (auto c : s.labels.labels) {
      if (!model.split.registered(c)) throw ContractError("evaluate: unregistered label in " + s.name);
    }
  }
  workers = std::max<std::size_t>(1, std::min(workers, samples.size()));
  std::vector<ConfusionMatrix> shards(workers, ConfusionMatrix(model.split.classes()));
  std::vector<LabelMap> predictions(keep_predictions ? samples.size() : 0);

  auto run = [&](std::size_t w) {
    NoGradGuard no_grad;
    for (std::size_t i = w; i < samples.size(); i += workers) {
      Tensor masks = model.forward(samples[i].image());
      LabelMap pred = predict(masks, class_subset, enc.grid(), enc.patch);
      shards[w].add(pred, samples[i].labels);
      if (keep_predictions) predictions[i] = std::move(pred);
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(run, w);
    for (auto& t : threads) t.join();
  }
  ConfusionMatrix total(model.split.classes());
  for (const auto& s : shards) total.merge(s);
  return {total.metrics(model.split), std::move(predictions)};
}

}  // namespace sptseg
