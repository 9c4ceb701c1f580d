#include <algorithm>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "muonlab/expcli.hpp"

namespace muonlab::cli {

namespace {

using nlohmann::json;

// Subtrees whose keys are open-ended and validated by the command itself.
const std::set<std::string> kOpenPaths{"optimizers", "pretrain.lr", "finetune.lr_sweep", "schedule",
                                       "problem"};

void check_keys(const json& given, const json& reference, const std::string& prefix) {
  if (!given.is_object() || !reference.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    auto ref = reference.find(key);
    if (ref == reference.end()) throw UsageError(path + ": unknown field");
    if (kOpenPaths.count(path) == 0) check_keys(value, *ref, path);
  }
}

void deep_merge(json& base, const json& patch) {
  for (const auto& [key, value] : patch.items()) {
    auto it = base.find(key);
    if (it != base.end() && it->is_object() && value.is_object() && kOpenPaths.count(key) == 0) {
      deep_merge(*it, value);
    } else {
      base[key] = value;
    }
  }
}

json read_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("--config: cannot open " + path);
  json doc = json::parse(f, nullptr, false);
  if (doc.is_discarded()) throw UsageError("--config: " + path + " is not valid JSON");
  if (!doc.is_object()) throw UsageError("--config: top level must be a JSON object");
  return doc;
}

struct Invocation {
  std::string command;
  std::string config_path;
  std::string out_dir;
  std::string seeds;
  std::vector<std::string> sets;
  std::string mode;
  std::vector<std::string> weights;
  std::string schedule;
  unsigned threads = 0;
};

json resolve_config(const Invocation& inv) {
  const json defaults = default_config(inv.command);
  json config = defaults;
  if (!inv.config_path.empty()) {
    const json file = read_config_file(inv.config_path);
    check_keys(file, defaults, "");
    deep_merge(config, file);
  }
  for (const auto& assignment : inv.sets) apply_override(config, assignment);
  check_keys(config, defaults, "");

  if (!inv.seeds.empty()) {
    if (!defaults.contains("seeds")) throw UsageError("--seeds: " + inv.command + " takes no seeds");
    config["seeds"] = parse_seed_list(inv.seeds);
  }
  if (!inv.mode.empty()) {
    if (inv.mode == "lora-only") {
      config["finetune"]["modes"] = {"lora"};
    } else if (inv.mode == "full-only") {
      config["finetune"]["modes"] = {"full"};
    } else if (inv.mode == "both") {
      config["finetune"]["modes"] = {"full", "lora"};
    } else {
      throw UsageError("--mode: expected lora-only, full-only or both");
    }
  }
  if (!inv.weights.empty()) config["weights"] = inv.weights;
  if (!inv.schedule.empty()) config["schedule"] = inv.schedule;
  return config;
}

int execute(const Invocation& inv, std::ostream& out, std::ostream& err) {
  try {
    const json config = resolve_config(inv);
    const unsigned threads = inv.threads > 0 ? std::min(inv.threads, default_threads()) : default_threads();
    CommandResult result = run_command(inv.command, config, threads);
    const std::filesystem::path dir =
        inv.out_dir.empty() ? std::filesystem::path("muonlab_out") / inv.command
                            : std::filesystem::path(inv.out_dir);
    const RunManifest manifest = write_outputs(dir, inv.command, config, result.outputs);
    out << fmt::format("{}: wrote {} files to {} (config {})\n", inv.command,
                       manifest.checksums.size() + 1, manifest.output_dir, manifest.config_digest);
    if (result.status != kOk) err << inv.command << ": " << result.message << "\n";
    return result.status;
  } catch (const NumericalError& e) {
    err << inv.command << ": numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const json::exception& e) {
    err << inv.command << ": config error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    err << inv.command << ": config error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::domain_error& e) {
    err << inv.command << ": input outside the supported domain: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << inv.command << ": failed: " << e.what() << "\n";
    return kNumerical;
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"muonlab: optimizer implicit-bias and fine-tuning mismatch experiments"};
  app.require_subcommand(1);
  Invocation inv;

  for (const auto& name : command_names()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", inv.config_path, "JSON config file");
    sub->add_option("--out", inv.out_dir, "output directory (default muonlab_out/<command>)");
    sub->add_option("--set", inv.sets, "override a config leaf, e.g. --set steps=100");
    sub->add_option("--threads", inv.threads, "worker threads (capped by MUONLAB_THREADS)");
    if (name != "ns-scan" && name != "spectra") {
      sub->add_option("--seeds", inv.seeds, "comma-separated seeds, e.g. 1,2,3");
    }
    if (name == "microtrain") sub->add_option("--mode", inv.mode, "lora-only, full-only or both");
    if (name == "spectra") sub->add_option("--weights", inv.weights, "weight JSON file(s) {m, n, entries}");
    if (name == "ns-scan") sub->add_option("--schedule", inv.schedule, "fixed_quintic or a coefficient JSON file");
    sub->callback([&inv, name] { inv.command = name; });
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }
  return execute(inv, out, err);
}

}  // namespace muonlab::cli
