#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace pedkd {

inline constexpr int kExitOk = 0;
inline constexpr int kExitContract = 1;
inline constexpr int kExitUsage = 2;

/// Environment variable that overrides teacher.endpoint.
inline constexpr const char* kTeacherEndpointEnv = "PEDKD_TEACHER_ENDPOINT";

/// Runs one subcommand. args excludes the program name, e.g.
/// {"train-distill", "--config", "c.json", "--seed", "3", "--out", "runs"}.
/// Artifacts go to `<out>/<subcommand>-<config hash>-<seed>/`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// The subcommand names in pipeline order.
const std::vector<std::string>& subcommands();

}  // namespace pedkd
