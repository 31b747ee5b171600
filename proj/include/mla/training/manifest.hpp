#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mla/model/schema.hpp"
#include "mla/training/trainer.hpp"

namespace mla::training {

// Human-readable record of one training run, consumed by later pipeline stages.
struct RunManifest {
  std::string kind;  // "teacher" or "student"
  nlohmann::ordered_json data_source;
  model::ModelConfig model_config;
  TrainConfig train_config;
  RunRecord record;
  std::string checkpoint;        // path relative to the manifest's directory
  std::string teacher_manifest;  // students only, relative as above
  std::string schema_digest;
  std::vector<double> lambda_candidates;
  std::vector<double> lambda_scores;
};

std::string serialize_manifest(const RunManifest& manifest);
RunManifest parse_manifest(const std::string& text);
void save_manifest(const std::filesystem::path& path, const RunManifest& manifest);
RunManifest load_manifest(const std::filesystem::path& path);

}  // namespace mla::training
