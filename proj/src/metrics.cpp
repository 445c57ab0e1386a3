#include "sptseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "sptseg/errors.hpp"

namespace sptseg {

bool GzlssSplit::is_seen(int c) const { return std::find(seen.begin(), seen.end(), c) != seen.end(); }
bool GzlssSplit::is_unseen(int c) const { return std::find(unseen.begin(), unseen.end(), c) != unseen.end(); }

std::vector<int> GzlssSplit::all() const {
  std::vector<int> out = seen;
  out.insert(out.end(), unseen.begin(), unseen.end());
  std::sort(out.begin(), out.end());
  return out;
}

void GzlssSplit::validate() const {
  if (seen.empty()) throw ConfigError("split: no seen classes");
  std::set<int> ids;
  for (int c : seen) ids.insert(c);
  for (int c : unseen) {
    if (ids.count(c)) throw ConfigError("split: class " + std::to_string(c) + " is both seen and unseen");
    ids.insert(c);
  }
  const auto n = static_cast<int>(ids.size());
  if (ids.size() != seen.size() + unseen.size() || *ids.begin() != 0 || *ids.rbegin() != n - 1) {
    throw ConfigError("split: class ids must be distinct and cover 0..C-1");
  }
  if (embeddings.defined() && (embeddings.rank() != 2 || embeddings.extent(0) != ids.size())) {
    throw ConfigError("split: embedding table " + shape_str(embeddings.shape()) + " vs " +
                      std::to_string(ids.size()) + " classes");
  }
}

double hiou(double miou_seen, double miou_unseen) {
  const double s = miou_seen + miou_unseen;
  if (s == 0.0) return 0.0;
  return 2.0 * miou_seen * miou_unseen / s;
}

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& truth) {
  if (pred.height != truth.height || pred.width != truth.width || pred.labels.size() != truth.labels.size()) {
    throw DimensionError("confusion: prediction " + std::to_string(pred.height) + "x" +
                         std::to_string(pred.width) + " vs truth " + std::to_string(truth.height) + "x" +
                         std::to_string(truth.width));
  }
  for (std::size_t i = 0; i < truth.labels.size(); ++i) {
    const std::size_t t = truth.labels[i], p = pred.labels[i];
    if (t >= classes_) throw ContractError("confusion: unregistered truth label " + std::to_string(t));
    if (p >= classes_) throw ContractError("confusion: unregistered predicted label " + std::to_string(p));
    ++counts_[t * classes_ + p];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw DimensionError("confusion: merging different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

SegMetrics ConfusionMatrix::metrics(const GzlssSplit& split) const {
  if (split.classes() != classes_) {
    throw ContractError("metrics: split has " + std::to_string(split.classes()) + " classes, confusion has " +
                        std::to_string(classes_));
  }
  SegMetrics m;
  std::uint64_t correct = 0;
  for (std::size_t c = 0; c < classes_; ++c) correct += count(c, c);
  const std::uint64_t all = total();
  m.pAcc = all ? 100.0 * static_cast<double>(correct) / static_cast<double>(all) : 0.0;

  double sum_s = 0.0, sum_u = 0.0;
  std::size_t n_s = 0, n_u = 0;
  for (std::size_t c = 0; c < classes_; ++c) {
    std::uint64_t tp = count(c, c), fp = 0, fn = 0;
    for (std::size_t o = 0; o < classes_; ++o) {
      if (o == c) continue;
      fp += count(o, c);
      fn += count(c, o);
    }
    const std::uint64_t denom = tp + fp + fn;
    if (denom == 0) continue;  // absent from both prediction and truth
    const double iou = 100.0 * static_cast<double>(tp) / static_cast<double>(denom);
    const int id = static_cast<int>(c);
    m.class_iou[id] = iou;
    if (split.is_seen(id)) {
      sum_s += iou;
      ++n_s;
    } else {
      sum_u += iou;
      ++n_u;
    }
  }
  m.mIoU_seen = n_s ? sum_s / static_cast<double>(n_s) : 0.0;
  m.mIoU_unseen = n_u ? sum_u / static_cast<double>(n_u) : 0.0;
  m.hIoU = hiou(m.mIoU_seen, m.mIoU_unseen);
  return m;
}

SegMetrics compute_metrics(const LabelMap& pred, const LabelMap& truth, const GzlssSplit& split) {
  for (auto t : truth.labels) {
    if (!split.registered(t)) throw ContractError("metrics: truth label " + std::to_string(t) + " not in split");
  }
  ConfusionMatrix cm(split.classes());
  cm.add(pred, truth);
  return cm.metrics(split);
}

namespace {

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

double round2(double v) { return std::stod(fixed2(v)); }

}  // namespace

std::string format_report(const SegMetrics& m) {
  const double s = round2(m.mIoU_seen), u = round2(m.mIoU_unseen);
  std::ostringstream os;
  os << "pAcc=" << fixed2(m.pAcc) << '\n'
     << "mIoU_seen=" << fixed2(s) << '\n'
     << "mIoU_unseen=" << fixed2(u) << '\n'
     << "hIoU=" << fixed2(hiou(s, u)) << '\n';
  return os.str();
}

std::map<std::string, double> parse_report(const std::string& text) {
  std::map<std::string, double> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("report: malformed line '" + line + "'");
    try {
      out[line.substr(0, eq)] = std::stod(line.substr(eq + 1));
    } catch (const std::exception&) {
      throw IoError("report: bad value in '" + line + "'");
    }
  }
  return out;
}

}  // namespace sptseg
