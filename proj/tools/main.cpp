#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "endopoint/config.hpp"
#include "endopoint/pipeline.hpp"

using namespace endopoint;

namespace {

bool is_switch(const std::string& key) { return key == "force" || key == "all_models"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"endopoint: keypoint training and matching evaluation for endoscopy"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  const char* commands[][2] = {
      {"pseudolabel", "label frames with a teacher network"},
      {"train", "fine-tune on cached pseudo-labels"},
      {"detect", "write keypoint and descriptor files per frame"},
      {"match", "mutual nearest neighbour matches per frame pair"},
      {"eval", "match, fit models and write reports"},
      {"report", "merge report.json files into tables"},
  };

  std::string config_path;
  std::map<std::string, std::string> overrides;
  std::map<std::string, bool> switches;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config_path, "key = value configuration file");
    for (const ConfigKey& key : config_keys()) {
      const std::string flag = std::string("--") + key.name;
      if (is_switch(key.name)) {
        sub->add_flag(flag, switches[key.name], key.help);
      } else {
        sub->add_option(flag, overrides[key.name], key.help);
      }
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  CLI::App* sub = app.get_subcommands().front();

  RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = RunConfig::load(config_path);
    // flags win over the file
    for (const auto& [key, value] : overrides) {
      if (sub->count(std::string("--") + key)) cfg.set(key, value);
    }
    for (const auto& [key, on] : switches) {
      if (on) cfg.set(key, "true");
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return run_command(command, cfg, std::cerr);
}
