#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "muonlab/error.hpp"

namespace muonlab::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kNumerical = 3, kNotConverged = 4 };

/// Bad flags, unreadable or malformed config. Maps to exit code 2.
class UsageError : public ContractError {
 public:
  explicit UsageError(const std::string& what) : ContractError(what) {}
};

/// 64-bit FNV-1a, lowercase hex, 16 digits.
std::string fnv1a64_hex(std::string_view data);

/// Files produced by one command, held in memory until the command has
/// finished so a failed run leaves nothing behind.
class OutputSet {
 public:
  /// Names are plain file names; path separators and ".." are rejected.
  void add(const std::string& name, std::string content);
  const std::map<std::string, std::string>& files() const { return files_; }
  bool contains(const std::string& name) const { return files_.count(name) != 0; }

 private:
  std::map<std::string, std::string> files_;
};

struct RunManifest {
  std::string command;
  std::string config_digest;
  std::vector<std::uint64_t> seeds;
  std::string output_dir;
  std::map<std::string, std::string> checksums;
  nlohmann::json config;

  nlohmann::json to_json() const;
};

/// Writes every file plus manifest.json into dir (created if needed).
RunManifest write_outputs(const std::filesystem::path& dir, const std::string& command,
                          const nlohmann::json& config, const OutputSet& outputs);

std::vector<std::uint64_t> parse_seed_list(const std::string& text);

/// Applies "a.b.c=value". The value is parsed as JSON when possible and kept
/// as a string otherwise; missing intermediate objects are created.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Canonical digest of (command, resolved config).
std::string config_digest(const std::string& command, const nlohmann::json& config);

const std::vector<std::string>& command_names();
nlohmann::json default_config(const std::string& command);

struct CommandResult {
  OutputSet outputs;
  int status = kOk;
  std::string message;
};

/// Runs a command on a fully resolved config (defaults, file, overrides).
CommandResult run_command(const std::string& command, const nlohmann::json& config,
                          unsigned threads);

/// Worker count: hardware concurrency, capped by MUONLAB_THREADS when set.
unsigned default_threads();

/// Full CLI: argument parsing, config layering, execution and output.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace muonlab::cli
