#pragma once

#include <ostream>
#include <string>

#include <json.hpp>

#include "mla/data/dataset.hpp"

namespace mla::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

// Default output root when --out is absent.
inline constexpr const char* kOutputRootEnv = "MLA_OUTPUT_ROOT";

// Runs one command line (argv[0] is the program name) and returns the exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Rebuilds the prepared dataset a manifest's data_source describes.
data::PreparedData load_data_source(const nlohmann::ordered_json& source);

}  // namespace mla::cli
