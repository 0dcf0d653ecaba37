#pragma once

// Command-line front end: synth, train, eval, embed.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.

#include "dccmvc/data.hpp"
#include "dccmvc/metrics.hpp"
#include "dccmvc/trainer.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace dccmvc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  TrainConfig train;
  std::filesystem::path data;
  DataFormat format = DataFormat::kDccb;
  Normalization normalize = Normalization::kMinMax;
  std::filesystem::path out = ".";
  AssignMode assign = AssignMode::kKMeans;
  NmiNormalization nmi_norm = NmiNormalization::kGeometric;
  bool dump_embedding = false;
};

// Strict conversion: unknown keys and wrongly typed values throw ConfigError
// naming the key. Keys are the snake_case forms of the --kebab-case flags.
RunConfig parse_run_config(const nlohmann::json& j);
// Training keys only; no dataset path needed, run-level keys are rejected.
TrainConfig parse_train_config(const nlohmann::json& j);
nlohmann::ordered_json to_json(const RunConfig& config);

nlohmann::ordered_json synth_manifest(const SynthSpec& spec);

int run(int argc, char** argv);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dccmvc::cli
