#include "mla/training/metrics.hpp"

#include <vector>

#include "mla/error.hpp"

namespace mla::training {

std::string to_string(Metric metric) { return metric == Metric::F1Macro ? "f1_macro" : "accuracy"; }

Metric parse_metric(const std::string& text) {
  if (text == "f1" || text == "f1_macro") return Metric::F1Macro;
  if (text == "accuracy" || text == "acc") return Metric::Accuracy;
  throw ConfigError("unknown metric '" + text + "' (expected f1_macro or accuracy)");
}

double accuracy(std::span<const std::size_t> truth, std::span<const std::size_t> predicted) {
  if (truth.size() != predicted.size()) throw DimensionError("accuracy: length mismatch");
  if (truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += truth[i] == predicted[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double f1_macro(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                std::size_t classes) {
  if (truth.size() != predicted.size()) throw DimensionError("f1_macro: length mismatch");
  std::vector<double> tp(classes), fp(classes), fn(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= classes || predicted[i] >= classes) throw RangeError("f1_macro: label out of range");
    if (truth[i] == predicted[i]) {
      tp[truth[i]] += 1;
    } else {
      fp[predicted[i]] += 1;
      fn[truth[i]] += 1;
    }
  }
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (tp[c] + fp[c] + fn[c] == 0) continue;
    ++present;
    total += 2.0 * tp[c] / (2.0 * tp[c] + fp[c] + fn[c]);
  }
  return present == 0 ? 0.0 : total / static_cast<double>(present);
}

double evaluate(Metric metric, std::span<const std::size_t> truth,
                std::span<const std::size_t> predicted, std::size_t classes) {
  return metric == Metric::F1Macro ? f1_macro(truth, predicted, classes) : accuracy(truth, predicted);
}

}  // namespace mla::training
