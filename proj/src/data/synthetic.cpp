#include <cmath>
#include <string>

#include "mla/data/prepare.hpp"
#include "mla/error.hpp"
#include "mla/rng.hpp"

namespace mla::data {

PreparedData synth_planted(const SynthOptions& options) {
  if (options.groups < 2) throw ConfigError("synthetic data needs at least 2 groups");
  if (options.features_per_group < 1) throw ConfigError("synthetic groups need at least one feature");
  if (options.informative_group >= options.groups) throw ConfigError("informative group index out of range");
  if (options.samples < 2) throw ConfigError("synthetic data needs at least 2 samples");
  if (!(options.noise >= 0.0)) throw ConfigError("noise must be non-negative");

  const std::size_t m = options.groups, k = options.features_per_group, f = m * k, n = options.samples;
  Rng rng(derive_seed(options.seed, 0x51));
  std::vector<double> direction(k);
  double norm = 0.0;
  for (double& w : direction) {
    w = rng.normal();
    norm += w * w;
  }
  norm = std::sqrt(norm);
  for (double& w : direction) w /= norm;

  PreparedData out;
  TabularDataset& ds = out.dataset;
  ds.id = "synthetic";
  ds.class_names = {"0", "1"};
  std::vector<model::ConceptGroup> groups;
  for (std::size_t g = 0; g < m; ++g) {
    model::ConceptGroup group{"group" + std::to_string(g), {}};
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t col = g * k + j;
      const std::string name = "g" + std::to_string(g) + "_x" + std::to_string(j);
      ds.raw_columns.push_back(RawColumn{name, ColumnKind::Numeric, col, 1, {}});
      ds.column_names.push_back(name);
      group.columns.push_back(col);
    }
    groups.push_back(std::move(group));
  }
  ds.features = kernel::Tensor({n, f});
  const std::size_t base = options.informative_group * k;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < f; ++j) ds.features(i, j) = rng.normal();
    double score = 0.0;
    for (std::size_t j = 0; j < k; ++j) score += direction[j] * ds.features(i, base + j);
    score += options.noise * rng.normal();
    ds.labels.push_back(score > 0.0 ? 1 : 0);
    ds.sample_ids.push_back(i);
  }
  ds.splits = stratified_split(ds.labels, 2, SplitOptions{options.validation_fraction, 0.0, options.seed});
  normalize(ds);
  ds.validate();
  out.schema = model::GroupSchema(std::move(groups));
  out.schema.validate(f);
  return out;
}

}  // namespace mla::data
