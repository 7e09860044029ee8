#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ppfpose/pipeline.hpp"
#include "ppfpose/transport.hpp"

namespace ppfpose::cli {

// Exit codes.
constexpr int kOk = 0;
constexpr int kPartial = 1;
constexpr int kConfig = 2;  // also: no hypothesis from `estimate`
constexpr int kBadModel = 3;
constexpr int kIo = 4;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Settings shared by every subcommand. Flags given on the command line win.
struct RunConfig {
  std::optional<std::filesystem::path> models_dir;
  std::optional<std::filesystem::path> calib_file;
  std::optional<std::filesystem::path> world_file;
  MatchParams match;
  EstimateOptions estimate;
  uint16_t port = kDefaultPort;
  std::string host = "127.0.0.1";
  std::optional<uint64_t> seed;
  int cycles = 1;
  std::optional<double> noise_sigma;
  int threads = 1;
  int timeout_ms = 10000;

  void validate() const;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

/// File name of a class's model inside a models directory.
std::string model_file_name(int class_id);

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ppfpose::cli
