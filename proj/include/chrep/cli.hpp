#ifndef CHREP_CLI_HPP
#define CHREP_CLI_HPP

namespace chrep {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitNumeric = 2;

/// Entry point of the `chrep` tool. Subcommands: gen, train, calibrate, eval, run, report.
int run_cli(int argc, char** argv);

} // namespace chrep

#endif
