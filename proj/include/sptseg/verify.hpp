#pragma once

#include <string>
#include <vector>

namespace sptseg {

struct PropertyResult {
  std::string id;  // e.g. "fft.roundtrip.g12"
  bool passed = false;
  std::string detail;
};

/// Published (mIoU(S), mIoU(U), hIoU) rows used by the metrics suite.
struct HiouTriple {
  const char* label;
  double seen;
  double unseen;
  double hiou;
};
const std::vector<HiouTriple>& published_hiou_triples();

/// Names accepted by run_suite, "all" last.
const std::vector<std::string>& suite_names();

/// Runs one oracle suite (fft, grad, hilo, metrics or all). Unknown names
/// raise ContractError.
std::vector<PropertyResult> run_suite(const std::string& suite);

}  // namespace sptseg
