#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

namespace volformer {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitTraining = 4,
  kExitCheckpoint = 5,
};

/// Runs one command line (args[0] is the program name). Tables go to `out`,
/// diagnostics to `err`. Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Creates `dir` and records `resolved` as its config.json. A directory that
/// already holds a different config is refused unless `force` is set.
void prepare_output_dir(const std::filesystem::path& dir, const nlohmann::json& resolved, bool force);

}  // namespace volformer
