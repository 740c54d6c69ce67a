#pragma once

#include <ostream>

namespace histgdp::cli {

/// Entry point of the histgdp executable. Subcommands: validate, features,
/// estimate, evaluate, explain, correlate. Exit codes: 0 success, 1 usage
/// or validation error, 2 numerical error, 3 I/O error.
///
/// Settings resolve as flag > JSON config file (--config) > default. Config
/// keys are the flag names without the leading dashes and with '-' replaced
/// by '_'.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace histgdp::cli
