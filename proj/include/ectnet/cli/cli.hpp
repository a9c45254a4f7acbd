#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ectnet/data/dataset.hpp"
#include "json.hpp"

namespace ectnet::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kDataError = 3, kNumericError = 4 };

/// Name of the environment variable holding the default data directory; the
/// default dataset is <dir>/mddect.bin.
inline constexpr const char* kDataDirEnv = "ECTNET_DATA_DIR";

std::string version();

/// Everything needed to repeat a run: written into the run directory before work starts.
struct RunManifest {
  std::string command;
  std::string version;
  std::string created;  // local time, ISO 8601
  std::string architecture;
  nlohmann::json options = nlohmann::json::object();       // effective flag values
  nlohmann::json train_config = nlohmann::json::object();  // empty unless training
  std::uint64_t seed = 0;
  std::uint64_t init_seed = 0;
  std::uint64_t split_seed = 0;
  std::string dataset_path;
  std::string dataset_fingerprint;  // of the raw file contents as loaded
  std::vector<int> train_volunteers, validation_volunteers, test_volunteers;
  NormStats norm_stats;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

/// Creates <root>/<YYYYmmdd-HHMMSS>-seed<seed>, adding a numeric suffix on collision.
std::filesystem::path make_run_dir(const std::filesystem::path& root, std::uint64_t seed);

/// Parses and executes a command line (args exclude the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ectnet::cli
