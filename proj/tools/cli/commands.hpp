#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace iia::cli {

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // unexpected, non-library failure
inline constexpr int kExitConfig = 2;   // bad flags, ConfigError, ShapeError, ContractError
inline constexpr int kExitData = 3;     // FormatError, DataError, IoError, EvalError
inline constexpr int kExitNumerical = 4;

/// Parses `args` (without the program name) and runs one subcommand.
/// Reports go to `out`; logs and "<ErrorKind>: message" lines go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace iia::cli
