#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "muonlab/expcli.hpp"

namespace muonlab::cli {

std::string fnv1a64_hex(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = kDigits[h & 0xf];
  return out;
}

void OutputSet::add(const std::string& name, std::string content) {
  if (name.empty() || name == "manifest.json" || name.find("..") != std::string::npos ||
      name.find('/') != std::string::npos || name.find('\\') != std::string::npos) {
    throw ContractError("output name \"" + name + "\" is not a plain file name");
  }
  if (!files_.emplace(name, std::move(content)).second) {
    throw ContractError("output \"" + name + "\" produced twice");
  }
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json files = nlohmann::json::array();
  for (const auto& [name, sum] : checksums) files.push_back({{"name", name}, {"fnv1a64", sum}});
  return {{"command", command},     {"config_digest", config_digest}, {"seeds", seeds},
          {"output_dir", output_dir}, {"files", files},                 {"config", config}};
}

RunManifest write_outputs(const std::filesystem::path& dir, const std::string& command,
                          const nlohmann::json& config, const OutputSet& outputs) {
  RunManifest manifest;
  manifest.command = command;
  manifest.config = config;
  manifest.config_digest = config_digest(command, config);
  if (auto it = config.find("seeds"); it != config.end() && it->is_array()) {
    manifest.seeds = it->get<std::vector<std::uint64_t>>();
  }
  manifest.output_dir = dir.string();

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw UsageError("cannot create output directory " + dir.string() + ": " + ec.message());

  auto write = [&](const std::string& name, const std::string& content) {
    const auto path = dir / name;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw UsageError("cannot write " + path.string());
  };
  for (const auto& [name, content] : outputs.files()) {
    write(name, content);
    manifest.checksums[name] = fnv1a64_hex(content);
  }
  write("manifest.json", manifest.to_json().dump(2) + "\n");
  return manifest;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw UsageError("--seeds: \"" + text + "\" is not a comma-separated list of integers");
    }
    try {
      seeds.push_back(std::stoull(item));
    } catch (const std::out_of_range&) {
      throw UsageError("--seeds: \"" + item + "\" is out of range");
    }
  }
  if (seeds.empty()) throw UsageError("--seeds: empty seed list");
  return seeds;
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw UsageError("--set: expected key.path=value, got \"" + assignment + "\"");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  nlohmann::json* node = &doc;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw UsageError("--set: empty path component in \"" + key + "\"");
    parts.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw UsageError("--set: " + key + " descends into a non-object");
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = nlohmann::json::object();
  }
  if (!node->is_object()) throw UsageError("--set: " + key + " descends into a non-object");
  (*node)[parts.back()] = std::move(value);
}

std::string config_digest(const std::string& command, const nlohmann::json& config) {
  // nlohmann::json objects are key-sorted, so dump() is canonical.
  return fnv1a64_hex(command + "\n" + config.dump());
}

unsigned default_threads() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MUONLAB_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && cap >= 1) n = std::min(n, static_cast<unsigned>(cap));
  }
  return n;
}

}  // namespace muonlab::cli
