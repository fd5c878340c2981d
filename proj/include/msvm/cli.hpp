#pragma once

#include <iosfwd>

namespace msvm {

// Exit codes of the msvm command.
enum ExitCode : int { kExitOk = 0, kExitFailed = 1, kExitUsage = 2, kExitIo = 3, kExitNumeric = 4 };

// `msvm verify|arch|decay|train-toy|bench ...`; reports go to `out`, diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace msvm
