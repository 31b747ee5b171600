#pragma once

#include <cstddef>
#include <span>
#include <string>

namespace mla::training {

enum class Metric { F1Macro, Accuracy };

std::string to_string(Metric metric);
Metric parse_metric(const std::string& text);

double accuracy(std::span<const std::size_t> truth, std::span<const std::size_t> predicted);
// Unweighted mean of per-class F1 over classes present in truth or predictions.
double f1_macro(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                std::size_t classes);
double evaluate(Metric metric, std::span<const std::size_t> truth,
                std::span<const std::size_t> predicted, std::size_t classes);

}  // namespace mla::training
