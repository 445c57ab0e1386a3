#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sptseg/decoder.hpp"
#include "sptseg/tensor.hpp"

namespace sptseg {

/// Registry of seen / unseen class ids and their frozen embeddings.
/// Class ids index the rows of `embeddings`.
struct GzlssSplit {
  std::vector<int> seen;
  std::vector<int> unseen;
  Tensor embeddings;  // [C x D], unit-norm rows

  std::size_t classes() const { return seen.size() + unseen.size(); }
  bool is_seen(int c) const;
  bool is_unseen(int c) const;
  bool registered(int c) const { return is_seen(c) || is_unseen(c); }
  std::vector<int> all() const;
  void validate() const;
};

struct SegMetrics {
  double pAcc = 0.0;
  std::map<int, double> class_iou;  // classes present in prediction or truth
  double mIoU_seen = 0.0;
  double mIoU_unseen = 0.0;
  double hIoU = 0.0;
};

/// Harmonic mean of two percentages; 0 when both are 0.
double hiou(double miou_seen, double miou_unseen);

/// Dataset-level confusion counts. Shards accumulate independently and merge
/// additively.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);

  void add(const LabelMap& pred, const LabelMap& truth);
  void merge(const ConfusionMatrix& other);

  std::size_t classes() const { return classes_; }
  std::uint64_t count(std::size_t truth, std::size_t pred) const { return counts_[truth * classes_ + pred]; }
  std::uint64_t total() const;

  SegMetrics metrics(const GzlssSplit& split) const;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;  // [truth][pred]
};

SegMetrics compute_metrics(const LabelMap& pred, const LabelMap& truth, const GzlssSplit& split);

/// Flat key=value report, two-decimal fixed point. hIoU is recomputed from the
/// rounded mIoU values so the file is self-consistent.
std::string format_report(const SegMetrics& m);

/// Parses a report written by format_report. Throws IoError on malformed
/// input.
std::map<std::string, double> parse_report(const std::string& text);

}  // namespace sptseg
