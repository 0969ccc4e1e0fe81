#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace usqm::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 2;
inline constexpr int kExitConfig = 3;       // shape, range, unknown name, bad flags
inline constexpr int kExitInsufficient = 4;
inline constexpr int kExitUnreachable = 5;  // PSNR target outside the kind's range
inline constexpr int kExitSchema = 6;       // malformed inputs or corrupt artifacts
inline constexpr int kExitInternal = 70;

/// Runs the `usqm` command line. `args` excludes the program name.
/// Machine-readable results go to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace usqm::cli
