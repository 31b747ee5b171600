#include "mla/model/checkpoint.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "mla/error.hpp"

namespace mla::model {

using nlohmann::ordered_json;

namespace {

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace

std::string serialize_checkpoint(const Model& model) {
  model.weights.validate(model.schema, model.config);
  ordered_json doc;
  doc["format"] = "mla-checkpoint";
  doc["version"] = kCheckpointVersion;
  const ModelConfig& c = model.config;
  doc["config"] = {{"layers", c.layers}, {"heads", c.heads},     {"d_model", c.d_model},
                   {"d_ff", c.d_ff},     {"dropout", c.dropout}, {"classes", c.classes}};
  ordered_json groups = ordered_json::array();
  for (const auto& g : model.schema.groups()) groups.push_back({{"name", g.name}, {"columns", g.columns}});
  doc["schema"] = {{"digest", hex64(model.schema.digest())}, {"groups", std::move(groups)}};
  ordered_json tensors = ordered_json::array();
  const auto names = model.weights.parameter_names();
  const auto params = model.weights.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto data = params[i]->data();
    tensors.push_back({{"name", names[i]},
                       {"shape", params[i]->shape()},
                       {"data", std::vector<double>(data.begin(), data.end())}});
  }
  doc["tensors"] = std::move(tensors);
  return doc.dump() + "\n";
}

Model parse_checkpoint(const std::string& text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (doc.at("format") != "mla-checkpoint") throw FormatError("not an mla checkpoint");
    if (doc.at("version").get<int>() != kCheckpointVersion) {
      throw FormatError("unsupported checkpoint version " + doc.at("version").dump());
    }
    Model model;
    const auto& c = doc.at("config");
    model.config = ModelConfig{c.at("layers"), c.at("heads"),   c.at("d_model"),
                               c.at("d_ff"),   c.at("dropout"), c.at("classes")};
    model.config.validate();
    std::vector<ConceptGroup> groups;
    for (const auto& g : doc.at("schema").at("groups")) {
      groups.push_back(ConceptGroup{g.at("name"), g.at("columns").get<std::vector<std::size_t>>()});
    }
    model.schema = GroupSchema(std::move(groups));
    model.schema.validate(model.schema.feature_count());
    if (doc.at("schema").at("digest") != hex64(model.schema.digest())) {
      throw FormatError("checkpoint schema digest does not match its groups");
    }
    model.weights = init_weights(model.schema, model.config, 0);
    const auto names = model.weights.parameter_names();
    auto params = model.weights.parameters();
    const auto& tensors = doc.at("tensors");
    if (tensors.size() != params.size()) {
      throw FormatError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, expected " +
                        std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& t = tensors[i];
      if (t.at("name") != names[i]) {
        throw FormatError("tensor " + std::to_string(i) + " is '" + t.at("name").get<std::string>() +
                          "', expected '" + names[i] + "'");
      }
      *params[i] = Tensor(t.at("shape").get<kernel::Shape>(), t.at("data").get<std::vector<double>>());
    }
    model.weights.validate(model.schema, model.config);
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  const std::string text = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << text;
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace mla::model
