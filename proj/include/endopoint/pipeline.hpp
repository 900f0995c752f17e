#pragma once

#include <ostream>
#include <string>

#include "endopoint/config.hpp"

namespace endopoint {

inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 1;
inline constexpr int kExitConfig = 2;

// Each command returns an exit code and throws ConfigError for bad
// configuration or inputs, before doing any work where possible.
int cmd_pseudolabel(const RunConfig& cfg, std::ostream& log);
int cmd_train(const RunConfig& cfg, std::ostream& log);
int cmd_detect(const RunConfig& cfg, std::ostream& log);
int cmd_match(const RunConfig& cfg, std::ostream& log);
int cmd_eval(const RunConfig& cfg, std::ostream& log);
int cmd_report(const RunConfig& cfg, std::ostream& log);

/// Dispatches by name and maps exceptions to exit codes.
int run_command(const std::string& name, const RunConfig& cfg, std::ostream& log);

}  // namespace endopoint
