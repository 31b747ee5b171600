#include "mla/data/prepare.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "mla/data/csv.hpp"
#include "mla/error.hpp"

namespace mla::data {

namespace {

constexpr std::size_t kCovtypeFeatures = 54;

const std::array<const char*, 10> kCovtypeNumeric = {
    "Elevation",
    "Aspect",
    "Slope",
    "Horizontal_Distance_To_Hydrology",
    "Vertical_Distance_To_Hydrology",
    "Horizontal_Distance_To_Roadways",
    "Hillshade_9am",
    "Hillshade_Noon",
    "Hillshade_3pm",
    "Horizontal_Distance_To_Fire_Points",
};

std::vector<std::size_t> iota_range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> out;
  for (std::size_t i = begin; i < end; ++i) out.push_back(i);
  return out;
}

RawColumn one_hot_column(const std::string& name, std::size_t begin, std::size_t width) {
  RawColumn c{name, ColumnKind::Categorical, begin, width, {}};
  for (std::size_t i = 1; i <= width; ++i) c.categories.push_back(std::to_string(i));
  return c;
}

}  // namespace

PreparedData covertype_prepare(std::istream& in, const CovertypeOptions& options) {
  std::vector<int> values;
  std::vector<int> cover;
  std::vector<std::size_t> line_numbers;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_simple(line);
    if (fields.size() != kCovtypeFeatures + 1) {
      throw FormatError("covtype line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                        " fields, expected 55");
    }
    for (std::size_t i = 0; i <= kCovtypeFeatures; ++i) {
      const auto v = parse_double(fields[i]);
      if (!v) throw FormatError("covtype line " + std::to_string(line_no) + ": unparseable field " + std::to_string(i + 1));
      if (i < kCovtypeFeatures) {
        values.push_back(static_cast<int>(*v));
      } else {
        cover.push_back(static_cast<int>(*v));
      }
    }
    line_numbers.push_back(line_no - 1);
  }
  if (cover.empty()) throw DataError("covtype input is empty");

  std::map<int, std::size_t> counts;
  for (int c : cover) ++counts[c];
  std::vector<std::pair<int, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() < 3) throw DataError("covtype input has fewer than three classes");
  std::vector<int> kept_ids = {ranked[0].first, ranked[1].first, ranked[2].first};
  std::sort(kept_ids.begin(), kept_ids.end());

  std::vector<std::size_t> rows;
  std::vector<std::size_t> labels;
  for (std::size_t r = 0; r < cover.size(); ++r) {
    const auto it = std::find(kept_ids.begin(), kept_ids.end(), cover[r]);
    if (it == kept_ids.end()) continue;
    rows.push_back(r);
    labels.push_back(static_cast<std::size_t>(it - kept_ids.begin()));
  }
  if (options.subsample > 0) {
    const auto pick = stratified_subsample(labels, 3, options.subsample, options.seed);
    std::vector<std::size_t> sub_rows, sub_labels;
    for (std::size_t i : pick) {
      sub_rows.push_back(rows[i]);
      sub_labels.push_back(labels[i]);
    }
    rows = std::move(sub_rows);
    labels = std::move(sub_labels);
  }

  PreparedData out;
  TabularDataset& ds = out.dataset;
  ds.id = "covertype";
  for (int id : kept_ids) ds.class_names.push_back(std::to_string(id));
  for (std::size_t i = 0; i < kCovtypeNumeric.size(); ++i) {
    ds.raw_columns.push_back(RawColumn{kCovtypeNumeric[i], ColumnKind::Numeric, i, 1, {}});
    ds.column_names.emplace_back(kCovtypeNumeric[i]);
  }
  ds.raw_columns.push_back(one_hot_column("Wilderness_Area", 10, 4));
  ds.raw_columns.push_back(one_hot_column("Soil_Type", 14, 40));
  for (std::size_t i = 1; i <= 4; ++i) ds.column_names.push_back("Wilderness_Area=" + std::to_string(i));
  for (std::size_t i = 1; i <= 40; ++i) ds.column_names.push_back("Soil_Type=" + std::to_string(i));

  ds.features = kernel::Tensor({rows.size(), kCovtypeFeatures});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < kCovtypeFeatures; ++j) {
      ds.features(i, j) = static_cast<double>(values[rows[i] * kCovtypeFeatures + j]);
    }
    ds.sample_ids.push_back(line_numbers[rows[i]]);
  }
  ds.labels = std::move(labels);
  ds.splits = stratified_split(ds.labels, 3,
                               SplitOptions{options.validation_fraction, options.test_fraction, options.seed});
  normalize(ds);
  ds.validate();

  out.schema = model::GroupSchema({
      {"Generals", {0, 1, 2}},
      {"Distances", {3, 4, 5, 9}},
      {"Hillshades", {6, 7, 8}},
      {"Wild areas", iota_range(10, 14)},
      {"Soil types", iota_range(14, 54)},
  });
  out.schema.validate(ds.feature_count());
  return out;
}

PreparedData covertype_prepare(const std::filesystem::path& path, const CovertypeOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open covtype file " + path.string());
  return covertype_prepare(in, options);
}

// ---- KDD'99 -------------------------------------------------------------------

std::size_t ClassMap::lookup(const std::string& raw_label) const {
  const auto it = labels.find(raw_label);
  return it == labels.end() ? fallback : it->second;
}

ClassMap default_ni_class_map() {
  ClassMap map;
  map.classes = {"normal", "dos", "other_attack"};
  map.labels["normal"] = 0;
  for (const char* dos : {"back", "land", "neptune", "pod", "smurf", "teardrop"}) map.labels[dos] = 1;
  map.fallback = 2;
  return map;
}

ClassMap parse_class_map(const std::string& json_text) {
  try {
    const auto doc = nlohmann::json::parse(json_text);
    ClassMap map;
    map.classes = doc.at("classes").get<std::vector<std::string>>();
    if (map.classes.size() < 2) throw ConfigError("class map needs at least two classes");
    auto index_of = [&](const std::string& name) {
      const auto it = std::find(map.classes.begin(), map.classes.end(), name);
      if (it == map.classes.end()) throw ConfigError("class map refers to unknown class '" + name + "'");
      return static_cast<std::size_t>(it - map.classes.begin());
    };
    for (const auto& [label, cls] : doc.at("labels").items()) map.labels[label] = index_of(cls.get<std::string>());
    map.fallback = index_of(doc.at("fallback").get<std::string>());
    return map;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed class map: ") + e.what());
  }
}

ClassMap load_class_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open class map " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_class_map(buf.str());
}

namespace {

constexpr std::size_t kKddFields = 42;
const std::vector<std::string> kProtocols = {"icmp", "tcp", "udp"};
const std::vector<std::string> kFlags = {"OTH", "REJ", "RSTO", "RSTOS0", "RSTR", "S0",
                                         "S1",  "S2",  "S3",   "SF",     "SH"};
const std::array<const char*, 42> kKddNames = {
    "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes", "land",
    "wrong_fragment", "urgent", "hot", "num_failed_logins", "logged_in", "num_compromised",
    "root_shell", "su_attempted", "num_root", "num_file_creations", "num_shells",
    "num_access_files", "num_outbound_cmds", "is_host_login", "is_guest_login", "count",
    "srv_count", "serror_rate", "srv_serror_rate", "rerror_rate", "srv_rerror_rate",
    "same_srv_rate", "diff_srv_rate", "srv_diff_host_rate", "dst_host_count",
    "dst_host_srv_count", "dst_host_same_srv_rate", "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate", "dst_host_srv_diff_host_rate", "dst_host_serror_rate",
    "dst_host_srv_serror_rate", "dst_host_rerror_rate", "dst_host_srv_rerror_rate", "label"};

// Raw field indices of the numeric columns per group (service handled apart).
const std::vector<std::size_t> kBasicNumericTail = {4, 5, 6, 7, 8};
const std::vector<std::size_t> kContentFields = {9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21};

std::string kdd_label(const std::string& field) {
  std::string label = field;
  while (!label.empty() && (label.back() == '.' || label.back() == '\r' || label.back() == ' ')) label.pop_back();
  return label;
}

using StreamFactory = std::function<std::unique_ptr<std::istream>()>;

PreparedData ni_prepare_impl(const StreamFactory& open, const NiOptions& options) {
  const ClassMap map = options.class_map.value_or(default_ni_class_map());
  const std::size_t classes = map.classes.size();

  // Pass 1: labels only.
  std::vector<std::size_t> line_class;
  {
    auto in = open();
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(*in, line)) {
      ++line_no;
      if (line.empty() || line == "\r") {
        line_class.push_back(SIZE_MAX);
        continue;
      }
      const auto comma = line.rfind(',');
      if (comma == std::string::npos) throw FormatError("KDD line " + std::to_string(line_no) + " has no fields");
      line_class.push_back(map.lookup(kdd_label(line.substr(comma + 1))));
    }
  }
  std::vector<std::size_t> data_lines, data_labels;
  for (std::size_t i = 0; i < line_class.size(); ++i) {
    if (line_class[i] == SIZE_MAX) continue;
    data_lines.push_back(i);
    data_labels.push_back(line_class[i]);
  }
  if (data_lines.empty()) throw DataError("KDD input is empty");
  const std::size_t wanted = options.train_rows + options.validation_rows;
  if (wanted == 0 || options.train_rows == 0) throw ConfigError("NI train row count must be positive");
  const auto pick = stratified_subsample(data_labels, classes, wanted, options.seed);
  std::vector<std::size_t> chosen_line(line_class.size(), SIZE_MAX);
  for (std::size_t i = 0; i < pick.size(); ++i) chosen_line[data_lines[pick[i]]] = i;

  // Pass 2: parse chosen rows.
  const std::size_t n = pick.size();
  std::vector<std::array<double, kKddFields>> raw(n);
  std::vector<std::string> protocol(n), service(n), flag(n);
  std::vector<std::size_t> labels(n), sample_ids(n);
  {
    auto in = open();
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(*in, line)) {
      const std::size_t idx = line_no < chosen_line.size() ? chosen_line[line_no] : SIZE_MAX;
      ++line_no;
      if (idx == SIZE_MAX) continue;
      const auto fields = split_simple(line);
      if (fields.size() != kKddFields) {
        throw FormatError("KDD line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                          " fields, expected 42");
      }
      for (std::size_t f = 0; f + 1 < kKddFields; ++f) {
        if (f == 1 || f == 2 || f == 3) continue;
        const auto v = parse_double(fields[f]);
        if (!v) throw FormatError("KDD line " + std::to_string(line_no) + ": unparseable " + kKddNames[f]);
        raw[idx][f] = *v;
      }
      protocol[idx] = fields[1];
      service[idx] = fields[2];
      flag[idx] = fields[3];
      labels[idx] = map.lookup(kdd_label(fields[41]));
      sample_ids[idx] = line_no - 1;
    }
  }

  PreparedData out;
  TabularDataset& ds = out.dataset;
  ds.id = "network_intrusion";
  ds.class_names = map.classes;
  ds.labels = std::move(labels);
  ds.sample_ids = std::move(sample_ids);
  const double val_share = static_cast<double>(options.validation_rows) / static_cast<double>(wanted);
  ds.splits = stratified_split(ds.labels, classes, SplitOptions{val_share, 0.0, options.seed});

  std::unordered_map<std::string, double> service_share;
  std::size_t n_train = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (ds.splits[i] != Split::Train) continue;
    service_share[service[i]] += 1.0;
    ++n_train;
  }
  for (auto& [name, share] : service_share) share /= static_cast<double>(std::max<std::size_t>(n_train, 1));

  auto add_numeric = [&ds](const std::string& name) {
    ds.raw_columns.push_back(RawColumn{name, ColumnKind::Numeric, ds.column_names.size(), 1, {}});
    ds.column_names.push_back(name);
  };
  auto add_categorical = [&ds](const std::string& name, const std::vector<std::string>& cats) {
    ds.raw_columns.push_back(RawColumn{name, ColumnKind::Categorical, ds.column_names.size(), cats.size(), cats});
    for (const auto& c : cats) ds.column_names.push_back(name + "=" + c);
  };
  add_numeric("duration");
  add_categorical("protocol_type", kProtocols);
  add_categorical("flag", kFlags);
  for (std::size_t f : kBasicNumericTail) add_numeric(kKddNames[f]);
  add_numeric("service_frequency");
  for (std::size_t f : kContentFields) add_numeric(kKddNames[f]);
  for (std::size_t f = 22; f <= 30; ++f) add_numeric(kKddNames[f]);
  for (std::size_t f = 31; f <= 40; ++f) add_numeric(kKddNames[f]);

  ds.features = kernel::Tensor({n, ds.column_names.size()});
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t col = 0;
    auto put = [&](double v) { ds.features(i, col++) = v; };
    auto put_one_hot = [&](const std::vector<std::string>& cats, const std::string& value, const char* what) {
      const auto it = std::find(cats.begin(), cats.end(), value);
      if (it == cats.end()) {
        throw FormatError("KDD line " + std::to_string(ds.sample_ids[i] + 1) + ": unknown " + what + " '" + value + "'");
      }
      for (std::size_t c = 0; c < cats.size(); ++c) put(c == static_cast<std::size_t>(it - cats.begin()) ? 1.0 : 0.0);
    };
    put(raw[i][0]);
    put_one_hot(kProtocols, protocol[i], "protocol_type");
    put_one_hot(kFlags, flag[i], "flag");
    for (std::size_t f : kBasicNumericTail) put(raw[i][f]);
    const auto share = service_share.find(service[i]);
    put(share == service_share.end() ? 0.0 : share->second);
    for (std::size_t f : kContentFields) put(raw[i][f]);
    for (std::size_t f = 22; f <= 40; ++f) put(raw[i][f]);
  }
  normalize(ds);
  ds.validate();

  out.schema = model::GroupSchema({
      {"Basic", iota_range(0, 20)},
      {"Content", iota_range(20, 34)},
      {"Traffic", iota_range(34, 43)},
      {"Host", iota_range(43, 53)},
  });
  out.schema.validate(ds.feature_count());
  return out;
}

}  // namespace

PreparedData ni_prepare(const std::filesystem::path& path, const NiOptions& options) {
  if (!std::ifstream(path)) throw DataError("cannot open KDD file " + path.string());
  return ni_prepare_impl([path] { return std::make_unique<std::ifstream>(path, std::ios::binary); }, options);
}

PreparedData ni_prepare(std::istream& in, const NiOptions& options) {
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  return ni_prepare_impl([&text] { return std::make_unique<std::istringstream>(text); }, options);
}

}  // namespace mla::data
