#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sptseg/checkpoint.hpp"
#include "sptseg/config.hpp"
#include "sptseg/dataset.hpp"
#include "sptseg/decoder.hpp"
#include "sptseg/encoder.hpp"
#include "sptseg/losses.hpp"
#include "sptseg/metrics.hpp"

namespace sptseg {

/// Full segmentation model: frozen backbone and class embeddings plus the
/// trainable prompts, spectral filters and decoder.
struct Model {
  Config config;
  FrozenBackbone backbone;
  PromptParams prompts;
  DecoderParams decoder;
  GzlssSplit split;

  /// Fresh model; every random draw comes from named sub-streams of
  /// config.train.seed.
  static Model init(const Config& config);

  /// Mask logits [C x N] for one image.
  Tensor forward(std::span<const double> image) const;

  /// Parameters updated by training, in a fixed order.
  std::vector<Tensor> trainable();

  /// Every tensor, frozen ones included, under stable names.
  std::vector<NamedTensor> named_tensors();

  CheckpointData to_checkpoint();
  static Model from_checkpoint(const CheckpointData& data);
};

/// 64-bit FNV-1a digest of every frozen backbone byte.
std::uint64_t backbone_hash(Model& model);

/// Maps truth labels to loss rows: seen class c -> its index in split.seen,
/// anything else -> kIgnoreLabel. Unseen labels therefore never reach a loss.
std::vector<int> loss_target(const LabelMap& labels, const GzlssSplit& split);

/// Loss of one sample with the softmax restricted to seen classes.
LossTerms sample_loss(const Model& model, const Sample& sample);

struct LossRecord {
  std::size_t step = 0;
  double focal = 0.0;
  double ssim = 0.0;
  double total = 0.0;
};

/// Decoupled-weight-decay Adam over a fixed parameter list.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, const TrainConfig& cfg);
  /// One update at learning rate `lr`.
  void step(double lr);
  void zero_grad();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  TrainConfig cfg_;
  std::size_t t_ = 0;
};

/// Cosine-decayed learning rate for 1-based `step`.
double learning_rate(const TrainConfig& cfg, std::size_t step);

using StepCallback = std::function<void(const LossRecord&)>;

/// Optimizes the trainable parameters in place. Throws NumericError naming the
/// step and loss term if a loss goes non-finite.
std::vector<LossRecord> train(Model& model, const std::vector<Sample>& train_set, const StepCallback& on_step = {});

std::string loss_csv(const std::vector<LossRecord>& log);

/// Inverse of loss_csv. Throws IoError on a malformed header or row.
std::vector<LossRecord> parse_loss_csv(const std::string& text);

/// Mean total loss over consecutive windows of `window` steps (a trailing
/// partial window is dropped).
std::vector<double> windowed_means(const std::vector<LossRecord>& log, std::size_t window);

/// Markdown summary of a loss log and a metrics report.
std::string markdown_summary(const std::vector<LossRecord>& log, const std::map<std::string, double>& report);

struct EvalResult {
  SegMetrics metrics;
  std::vector<LabelMap> predictions;
};

/// Predicts over `class_subset` (all classes when empty) and accumulates
/// dataset-level confusion. `workers` > 1 shards images across threads; the
/// merged result does not depend on the worker count.
EvalResult evaluate(const Model& model, const std::vector<Sample>& samples, std::vector<int> class_subset = {},
                    std::size_t workers = 1, bool keep_predictions = false);

}  // namespace sptseg
