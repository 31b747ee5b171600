#pragma once

#include <filesystem>
#include <string>

#include "mla/model/encoder.hpp"

namespace mla::model {

inline constexpr int kCheckpointVersion = 1;

// JSON record: format tag, version, config, schema (with digest) and every
// weight tensor in declared order. Identical weights give identical bytes.
std::string serialize_checkpoint(const Model& model);
Model parse_checkpoint(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace mla::model
