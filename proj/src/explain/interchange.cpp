#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mla/error.hpp"
#include "mla/explain/explainers.hpp"

namespace mla::explain {

using nlohmann::ordered_json;

namespace {

constexpr const char* kFormat = "mla-explanations";
constexpr int kVersion = 1;

ordered_json record_json(const ExplanationRecord& r) {
  ordered_json j;
  j["sample_id"] = r.sample_id;
  j["method"] = to_string(r.explanation.method);
  j["predicted"] = r.explanation.predicted;
  j["label"] = r.label;
  j["correct"] = r.correct;
  j["scores"] = r.explanation.scores;
  j["ranked"] = r.explanation.ranked;
  return j;
}

}  // namespace

std::string serialize_explanations(const ExplanationFile& file) {
  ordered_json header;
  header["format"] = kFormat;
  header["version"] = kVersion;
  header["dataset"] = file.dataset_id;
  header["method"] = to_string(file.method);
  header["run_seed"] = file.run_seed;
  header["groups"] = file.groups;
  header["group_names"] = file.group_names;
  header["class_names"] = file.class_names;
  header["records"] = file.records.size();
  std::string out = header.dump() + "\n";
  for (const auto& r : file.records) out += record_json(r).dump() + "\n";
  return out;
}

ExplanationFile parse_explanations(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  ExplanationFile file;
  std::size_t expected = 0;
  try {
    if (!std::getline(in, line)) throw FormatError("explanation file is empty");
    ++line_no;
    const ordered_json header = ordered_json::parse(line);
    if (header.at("format") != kFormat) throw FormatError("not an explanation file");
    if (header.at("version") != kVersion) {
      throw FormatError("unsupported explanation file version " + header.at("version").dump());
    }
    file.dataset_id = header.at("dataset").get<std::string>();
    file.method = parse_method(header.at("method").get<std::string>());
    file.run_seed = header.at("run_seed").get<std::uint64_t>();
    file.groups = header.at("groups").get<std::size_t>();
    file.group_names = header.at("group_names").get<std::vector<std::string>>();
    file.class_names = header.value("class_names", std::vector<std::string>{});
    expected = header.at("records").get<std::size_t>();
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const ordered_json j = ordered_json::parse(line);
      ExplanationRecord r;
      r.sample_id = j.at("sample_id").get<std::size_t>();
      r.label = j.at("label").get<std::size_t>();
      r.correct = j.at("correct").get<bool>();
      r.explanation.method = parse_method(j.at("method").get<std::string>());
      r.explanation.predicted = j.at("predicted").get<std::size_t>();
      r.explanation.scores = j.at("scores").get<std::vector<double>>();
      r.explanation.ranked = j.at("ranked").get<std::vector<std::size_t>>();
      if (r.explanation.method != file.method) throw FormatError("record method differs from the header");
      r.explanation.validate(file.groups);
      file.records.push_back(std::move(r));
    }
  } catch (const Error& e) {
    throw FormatError("explanation file line " + std::to_string(line_no) + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("explanation file line " + std::to_string(line_no) + ": " + e.what());
  }
  if (file.records.size() != expected) {
    throw FormatError("explanation file declares " + std::to_string(expected) + " records but holds " +
                      std::to_string(file.records.size()));
  }
  return file;
}

void save_explanations(const std::filesystem::path& path, const ExplanationFile& file) {
  const std::string text = serialize_explanations(file);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write explanations " + path.string());
  out << text;
  if (!out) throw IoError("failed writing explanations " + path.string());
}

ExplanationFile load_explanations(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read explanations " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_explanations(buf.str());
}

}  // namespace mla::explain
