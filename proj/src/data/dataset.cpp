#include "mla/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "mla/data/csv.hpp"
#include "mla/error.hpp"
#include "mla/rng.hpp"

namespace mla::data {

using nlohmann::ordered_json;

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "validation" || text == "val") return Split::Validation;
  if (text == "test") return Split::Test;
  throw ConfigError("unknown split '" + text + "' (expected train, validation or test)");
}

std::vector<std::size_t> TabularDataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == split) out.push_back(i);
  }
  return out;
}

std::vector<std::vector<std::size_t>> TabularDataset::feature_blocks() const {
  std::vector<std::vector<std::size_t>> blocks;
  for (const RawColumn& c : raw_columns) {
    std::vector<std::size_t> cols(c.width);
    for (std::size_t j = 0; j < c.width; ++j) cols[j] = c.begin + j;
    blocks.push_back(std::move(cols));
  }
  return blocks;
}

void TabularDataset::validate() const {
  const std::size_t n = labels.size(), f = column_names.size();
  if (features.rows() != n || features.cols() != f) {
    throw DataError("feature matrix shape does not match " + std::to_string(n) + " rows x " +
                    std::to_string(f) + " columns");
  }
  if (splits.size() != n || sample_ids.size() != n) throw DataError("split/sample-id lengths do not match row count");
  if (!features.all_finite()) throw DataError("feature matrix contains NaN or infinite values");
  for (std::size_t y : labels) {
    if (y >= class_names.size()) throw DataError("label " + std::to_string(y) + " outside class range");
  }
  std::size_t expected = 0;
  for (const RawColumn& c : raw_columns) {
    if (c.begin != expected) throw DataError("raw column '" + c.name + "' is not contiguous with its predecessor");
    expected += c.width;
    if (c.kind != ColumnKind::Categorical) continue;
    for (std::size_t r = 0; r < n; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < c.width; ++j) {
        const double v = features(r, c.begin + j);
        if (v != 0.0 && v != 1.0) throw DataError("one-hot block '" + c.name + "' has a non-binary entry in row " + std::to_string(r));
        total += v;
      }
      if (total != 1.0) throw DataError("one-hot block '" + c.name + "' does not sum to 1 in row " + std::to_string(r));
    }
  }
  if (expected != f) throw DataError("raw columns do not cover all encoded columns");
}

namespace {

// Splits `total` across classes in proportion to `sizes` (largest remainder,
// ties to the lower class), never exceeding `cap` per class.
std::vector<std::size_t> apportion(const std::vector<std::size_t>& sizes, std::size_t total,
                                   std::vector<std::size_t> cap = {}) {
  if (cap.empty()) cap = sizes;
  std::size_t n = 0, room = 0;
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    n += sizes[c];
    room += cap[c];
  }
  total = std::min(total, room);
  std::vector<std::size_t> out(sizes.size(), 0);
  if (n == 0) return out;
  std::vector<std::pair<double, std::size_t>> remainder;
  std::size_t given = 0;
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    const double exact = static_cast<double>(total) * static_cast<double>(sizes[c]) / static_cast<double>(n);
    out[c] = std::min(cap[c], static_cast<std::size_t>(std::floor(exact)));
    given += out[c];
    remainder.emplace_back(exact - static_cast<double>(out[c]), c);
  }
  std::stable_sort(remainder.begin(), remainder.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  while (given < total) {
    for (const auto& [r, c] : remainder) {
      if (given == total) break;
      if (out[c] < cap[c]) {
        ++out[c];
        ++given;
      }
    }
  }
  return out;
}

}  // namespace

std::vector<Split> stratified_split(const std::vector<std::size_t>& labels, std::size_t classes,
                                    const SplitOptions& options) {
  if (options.validation_fraction < 0.0 || options.test_fraction < 0.0 ||
      options.validation_fraction + options.test_fraction >= 1.0) {
    throw ConfigError("validation and test fractions must be >= 0 and sum below 1");
  }
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class.at(labels[i]).push_back(i);
  std::vector<std::size_t> sizes;
  for (const auto& rows : by_class) sizes.push_back(rows.size());
  const auto n = static_cast<double>(labels.size());
  const auto n_val = apportion(sizes, static_cast<std::size_t>(std::llround(n * options.validation_fraction)));
  std::vector<std::size_t> rest(classes);
  for (std::size_t c = 0; c < classes; ++c) rest[c] = sizes[c] - n_val[c];
  const auto n_test = apportion(sizes, static_cast<std::size_t>(std::llround(n * options.test_fraction)), rest);
  std::vector<Split> out(labels.size(), Split::Train);
  Rng rng(derive_seed(options.seed, 0x5f1));
  for (std::size_t c = 0; c < classes; ++c) {
    auto& rows = by_class[c];
    rng.shuffle(rows);
    for (std::size_t i = 0; i < n_val[c]; ++i) out[rows[i]] = Split::Validation;
    for (std::size_t i = n_val[c]; i < n_val[c] + n_test[c]; ++i) out[rows[i]] = Split::Test;
  }
  return out;
}

std::vector<std::size_t> stratified_subsample(const std::vector<std::size_t>& labels,
                                              std::size_t classes, std::size_t count,
                                              std::uint64_t seed) {
  if (count >= labels.size()) {
    std::vector<std::size_t> all(labels.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class.at(labels[i]).push_back(i);
  std::vector<std::size_t> sizes;
  for (const auto& rows : by_class) sizes.push_back(rows.size());
  const auto take = apportion(sizes, count);
  Rng rng(derive_seed(seed, 0x5ab));
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < classes; ++c) {
    auto& rows = by_class[c];
    rng.shuffle(rows);
    out.insert(out.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take[c]));
  }
  std::sort(out.begin(), out.end());
  return out;
}

void normalize(TabularDataset& dataset) {
  const std::vector<std::size_t> train = dataset.indices(Split::Train);
  if (train.empty()) throw DataError("cannot normalize: the training split is empty");
  NormStats stats;
  for (const RawColumn& c : dataset.raw_columns) {
    if (c.kind != ColumnKind::Numeric) continue;
    const std::size_t col = c.begin;
    double mean = 0.0;
    for (std::size_t r : train) mean += dataset.features(r, col);
    mean /= static_cast<double>(train.size());
    double var = 0.0;
    for (std::size_t r : train) {
      const double d = dataset.features(r, col) - mean;
      var += d * d;
    }
    var /= static_cast<double>(train.size());
    const double sd = std::max(std::sqrt(var), 1e-8);
    stats.columns.push_back(col);
    stats.mean.push_back(mean);
    stats.stddev.push_back(sd);
  }
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    for (std::size_t i = 0; i < stats.columns.size(); ++i) {
      double& v = dataset.features(r, stats.columns[i]);
      v = (v - stats.mean[i]) / stats.stddev[i];
    }
  }
  dataset.stats = std::move(stats);
}

namespace {

ColumnKind parse_kind(const std::string& text) {
  if (text == "numeric") return ColumnKind::Numeric;
  if (text == "categorical") return ColumnKind::Categorical;
  throw ConfigError("unknown column kind '" + text + "' (expected numeric or categorical)");
}

const char* kind_name(ColumnKind kind) { return kind == ColumnKind::Numeric ? "numeric" : "categorical"; }

// Numeric-aware ordering: if every value parses as a number, order by value.
std::vector<std::string> sorted_values(const std::set<std::string>& values) {
  std::vector<std::string> out(values.begin(), values.end());
  const bool numeric = std::all_of(out.begin(), out.end(), [](const std::string& v) { return parse_double(v).has_value(); });
  if (numeric) {
    std::stable_sort(out.begin(), out.end(), [](const std::string& a, const std::string& b) {
      return *parse_double(a) < *parse_double(b);
    });
  }
  return out;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

CsvSchemaDecl parse_schema_decl(const std::string& json_text) {
  try {
    const auto doc = ordered_json::parse(json_text);
    CsvSchemaDecl decl;
    decl.label = doc.at("label").get<std::string>();
    for (const auto& c : doc.at("columns")) {
      decl.columns.push_back(ColumnDecl{c.at("name").get<std::string>(),
                                        parse_kind(c.value("kind", std::string("numeric")))});
    }
    if (decl.columns.empty()) throw ConfigError("column declaration lists no input columns");
    return decl;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed column declaration: ") + e.what());
  }
}

CsvSchemaDecl load_schema_decl(const std::filesystem::path& path) { return parse_schema_decl(slurp(path)); }

TabularDataset read_csv_dataset(std::istream& in, const CsvSchemaDecl& decl, const SplitOptions& split,
                                const std::string& id) {
  CsvReader reader(in);
  const auto header = reader.next();
  if (!header || (header->size() == 1 && header->front().empty())) throw DataError("empty file: no header row");
  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < header->size(); ++i) position.emplace((*header)[i], i);
  auto locate = [&](const std::string& name) {
    const auto it = position.find(name);
    if (it == position.end()) throw DataError("missing column '" + name + "'");
    return it->second;
  };
  const std::size_t label_pos = locate(decl.label);
  std::vector<std::size_t> input_pos;
  for (const ColumnDecl& c : decl.columns) input_pos.push_back(locate(c.name));

  std::vector<std::vector<std::string>> rows;
  while (auto record = reader.next()) {
    if (record->size() == 1 && record->front().empty()) continue;  // blank line
    if (record->size() != header->size()) {
      throw DataError("row at line " + std::to_string(reader.line()) + " has " + std::to_string(record->size()) +
                      " fields, header has " + std::to_string(header->size()));
    }
    rows.push_back(std::move(*record));
  }
  if (rows.empty()) throw DataError("empty file: no data rows");

  TabularDataset ds;
  ds.id = id;
  std::set<std::string> label_values;
  for (const auto& r : rows) {
    if (r[label_pos].empty()) throw DataError("missing label in data row " + std::to_string(&r - rows.data() + 1));
    label_values.insert(r[label_pos]);
  }
  ds.class_names = sorted_values(label_values);
  std::map<std::string, std::size_t> label_index;
  for (std::size_t i = 0; i < ds.class_names.size(); ++i) label_index[ds.class_names[i]] = i;

  std::size_t width = 0;
  for (std::size_t c = 0; c < decl.columns.size(); ++c) {
    RawColumn raw{decl.columns[c].name, decl.columns[c].kind, width, 1, {}};
    if (raw.kind == ColumnKind::Categorical) {
      std::set<std::string> values;
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const std::string& v = rows[r][input_pos[c]];
        if (v.empty()) throw DataError("missing value at data row " + std::to_string(r + 1) + ", column '" + raw.name + "'");
        values.insert(v);
      }
      raw.categories.assign(values.begin(), values.end());
      raw.width = raw.categories.size();
      for (const auto& cat : raw.categories) ds.column_names.push_back(raw.name + "=" + cat);
    } else {
      ds.column_names.push_back(raw.name);
    }
    width += raw.width;
    ds.raw_columns.push_back(std::move(raw));
  }

  ds.features = kernel::Tensor({rows.size(), width});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    ds.labels.push_back(label_index.at(rows[r][label_pos]));
    ds.sample_ids.push_back(r);
    for (std::size_t c = 0; c < decl.columns.size(); ++c) {
      const RawColumn& raw = ds.raw_columns[c];
      const std::string& cell = rows[r][input_pos[c]];
      if (raw.kind == ColumnKind::Numeric) {
        const auto v = parse_double(cell);
        if (!v || !std::isfinite(*v)) {
          throw DataError("unparseable cell '" + cell + "' at data row " + std::to_string(r + 1) + ", column '" + raw.name + "'");
        }
        ds.features(r, raw.begin) = *v;
      } else {
        const auto it = std::lower_bound(raw.categories.begin(), raw.categories.end(), cell);
        ds.features(r, raw.begin + static_cast<std::size_t>(it - raw.categories.begin())) = 1.0;
      }
    }
  }
  ds.splits = stratified_split(ds.labels, ds.class_count(), split);
  normalize(ds);
  ds.validate();
  return ds;
}

TabularDataset load_csv(const std::filesystem::path& path, const CsvSchemaDecl& decl, const SplitOptions& split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open data file " + path.string());
  return read_csv_dataset(in, decl, split, path.stem().string());
}

model::GroupSchema parse_group_config(const std::string& json_text, const TabularDataset& dataset) {
  std::unordered_map<std::string, std::vector<std::size_t>> lookup;
  for (const RawColumn& c : dataset.raw_columns) {
    std::vector<std::size_t> cols(c.width);
    for (std::size_t j = 0; j < c.width; ++j) cols[j] = c.begin + j;
    lookup[c.name] = cols;
  }
  for (std::size_t j = 0; j < dataset.column_names.size(); ++j) lookup.try_emplace(dataset.column_names[j], std::vector<std::size_t>{j});
  std::vector<model::ConceptGroup> groups;
  try {
    const auto doc = ordered_json::parse(json_text);
    for (const auto& g : doc.at("groups")) {
      model::ConceptGroup group{g.at("name").get<std::string>(), {}};
      for (const auto& name : g.at("columns")) {
        const auto it = lookup.find(name.get<std::string>());
        if (it == lookup.end()) throw SchemaError("group '" + group.name + "' names unknown column '" + name.get<std::string>() + "'");
        group.columns.insert(group.columns.end(), it->second.begin(), it->second.end());
      }
      groups.push_back(std::move(group));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed group config: ") + e.what());
  }
  model::GroupSchema schema(std::move(groups));
  schema.validate(dataset.feature_count());
  return schema;
}

model::GroupSchema load_group_config(const std::filesystem::path& path, const TabularDataset& dataset) {
  return parse_group_config(slurp(path), dataset);
}

std::string serialize_dataset(const PreparedData& data) {
  const TabularDataset& ds = data.dataset;
  ordered_json doc;
  doc["format"] = "mla-dataset";
  doc["version"] = kDatasetCacheVersion;
  doc["id"] = ds.id;
  doc["class_names"] = ds.class_names;
  doc["column_names"] = ds.column_names;
  ordered_json raw = ordered_json::array();
  for (const RawColumn& c : ds.raw_columns) {
    raw.push_back({{"name", c.name}, {"kind", kind_name(c.kind)}, {"begin", c.begin}, {"width", c.width}, {"categories", c.categories}});
  }
  doc["raw_columns"] = std::move(raw);
  doc["stats"] = {{"columns", ds.stats.columns}, {"mean", ds.stats.mean}, {"stddev", ds.stats.stddev}};
  const auto f = ds.features.data();
  doc["features"] = {{"rows", ds.features.rows()}, {"cols", ds.features.cols()}, {"data", std::vector<double>(f.begin(), f.end())}};
  doc["labels"] = ds.labels;
  std::vector<int> splits;
  for (Split s : ds.splits) splits.push_back(static_cast<int>(s));
  doc["splits"] = splits;
  doc["sample_ids"] = ds.sample_ids;
  ordered_json groups = ordered_json::array();
  for (const auto& g : data.schema.groups()) groups.push_back({{"name", g.name}, {"columns", g.columns}});
  doc["schema"] = {{"groups", std::move(groups)}};
  return doc.dump() + "\n";
}

PreparedData parse_dataset(const std::string& text) {
  try {
    const auto doc = ordered_json::parse(text);
    if (doc.at("format") != "mla-dataset") throw FormatError("not an mla dataset cache");
    if (doc.at("version").get<int>() != kDatasetCacheVersion) throw FormatError("unsupported dataset cache version");
    PreparedData out;
    TabularDataset& ds = out.dataset;
    ds.id = doc.at("id");
    ds.class_names = doc.at("class_names").get<std::vector<std::string>>();
    ds.column_names = doc.at("column_names").get<std::vector<std::string>>();
    for (const auto& c : doc.at("raw_columns")) {
      ds.raw_columns.push_back(RawColumn{c.at("name"), parse_kind(c.at("kind")), c.at("begin"), c.at("width"),
                                         c.at("categories").get<std::vector<std::string>>()});
    }
    const auto& st = doc.at("stats");
    ds.stats = NormStats{st.at("columns").get<std::vector<std::size_t>>(), st.at("mean").get<std::vector<double>>(),
                         st.at("stddev").get<std::vector<double>>()};
    const auto& f = doc.at("features");
    ds.features = kernel::Tensor({f.at("rows").get<std::size_t>(), f.at("cols").get<std::size_t>()},
                                 f.at("data").get<std::vector<double>>());
    ds.labels = doc.at("labels").get<std::vector<std::size_t>>();
    for (int s : doc.at("splits").get<std::vector<int>>()) {
      if (s < 0 || s > 2) throw FormatError("invalid split code");
      ds.splits.push_back(static_cast<Split>(s));
    }
    ds.sample_ids = doc.at("sample_ids").get<std::vector<std::size_t>>();
    std::vector<model::ConceptGroup> groups;
    for (const auto& g : doc.at("schema").at("groups")) {
      groups.push_back(model::ConceptGroup{g.at("name"), g.at("columns").get<std::vector<std::size_t>>()});
    }
    out.schema = model::GroupSchema(std::move(groups));
    ds.validate();
    out.schema.validate(ds.feature_count());
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed dataset cache: ") + e.what());
  }
}

void save_dataset(const std::filesystem::path& path, const PreparedData& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << serialize_dataset(data);
}

PreparedData load_dataset(const std::filesystem::path& path) {
  std::ifstream probe(path);
  if (!probe) throw DataError("cannot open dataset cache " + path.string());
  return parse_dataset(slurp(path));
}

}  // namespace mla::data
