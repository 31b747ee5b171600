#include "mla/training/manifest.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "mla/error.hpp"

namespace mla::training {

using nlohmann::ordered_json;

namespace {

ordered_json numbers(const std::vector<double>& values) {
  ordered_json out = ordered_json::array();
  for (double v : values) {
    if (std::isfinite(v)) {
      out.push_back(v);
    } else {
      out.push_back(nullptr);
    }
  }
  return out;
}

std::vector<double> read_numbers(const ordered_json& j) {
  std::vector<double> out;
  for (const auto& v : j) out.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
  return out;
}

}  // namespace

std::string serialize_manifest(const RunManifest& m) {
  ordered_json doc;
  doc["format"] = "mla-run-manifest";
  doc["version"] = 1;
  doc["kind"] = m.kind;
  doc["data_source"] = m.data_source;
  const auto& c = m.model_config;
  doc["model"] = {{"layers", c.layers}, {"heads", c.heads},     {"d_model", c.d_model},
                  {"d_ff", c.d_ff},     {"dropout", c.dropout}, {"classes", c.classes}};
  const auto& t = m.train_config;
  doc["training"] = {{"batch_size", t.batch_size},   {"epochs", t.epochs},
                     {"learning_rate", t.learning_rate}, {"temperature", t.temperature},
                     {"lambda", t.lambda},           {"seed", t.seed},
                     {"metric", to_string(t.metric)}, {"patience", t.patience}};
  const auto& r = m.record;
  doc["record"] = {{"seed", r.seed},
                   {"lambda", r.lambda},
                   {"temperature", r.temperature},
                   {"metric", to_string(r.metric)},
                   {"epochs_run", r.epochs_run()},
                   {"best_epoch", r.best_epoch},
                   {"train_loss", numbers(r.train_loss)},
                   {"validation_metric", numbers(r.validation_metric)}};
  doc["checkpoint"] = m.checkpoint;
  if (!m.teacher_manifest.empty()) doc["teacher_manifest"] = m.teacher_manifest;
  doc["schema_digest"] = m.schema_digest;
  if (!m.lambda_candidates.empty()) {
    doc["lambda_sweep"] = {{"candidates", numbers(m.lambda_candidates)}, {"scores", numbers(m.lambda_scores)}};
  }
  return doc.dump(2) + "\n";
}

RunManifest parse_manifest(const std::string& text) {
  try {
    const auto doc = ordered_json::parse(text);
    if (doc.at("format") != "mla-run-manifest") throw FormatError("not an mla run manifest");
    RunManifest m;
    m.kind = doc.at("kind");
    m.data_source = doc.at("data_source");
    const auto& c = doc.at("model");
    m.model_config = model::ModelConfig{c.at("layers"), c.at("heads"), c.at("d_model"),
                                        c.at("d_ff"), c.at("dropout"), c.at("classes")};
    const auto& t = doc.at("training");
    m.train_config.batch_size = t.at("batch_size");
    m.train_config.epochs = t.at("epochs");
    m.train_config.learning_rate = t.at("learning_rate");
    m.train_config.temperature = t.at("temperature");
    m.train_config.lambda = t.at("lambda");
    m.train_config.seed = t.at("seed");
    m.train_config.metric = parse_metric(t.at("metric"));
    m.train_config.patience = t.at("patience");
    const auto& r = doc.at("record");
    m.record.seed = r.at("seed");
    m.record.lambda = r.at("lambda");
    m.record.temperature = r.at("temperature");
    m.record.metric = parse_metric(r.at("metric"));
    m.record.best_epoch = r.at("best_epoch");
    m.record.train_loss = read_numbers(r.at("train_loss"));
    m.record.validation_metric = read_numbers(r.at("validation_metric"));
    m.checkpoint = doc.at("checkpoint");
    m.record.checkpoint = m.checkpoint;
    m.teacher_manifest = doc.value("teacher_manifest", std::string());
    m.schema_digest = doc.at("schema_digest");
    if (doc.contains("lambda_sweep")) {
      m.lambda_candidates = read_numbers(doc["lambda_sweep"].at("candidates"));
      m.lambda_scores = read_numbers(doc["lambda_sweep"].at("scores"));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed run manifest: ") + e.what());
  }
}

void save_manifest(const std::filesystem::path& path, const RunManifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << serialize_manifest(manifest);
}

RunManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read manifest " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_manifest(buf.str());
}

}  // namespace mla::training
