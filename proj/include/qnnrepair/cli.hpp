#ifndef QNNREPAIR_CLI_HPP_
#define QNNREPAIR_CLI_HPP_

#include <iosfwd>

namespace qnnrepair
{

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntimeError = 1;
inline constexpr int kExitNothingSolved = 2;
inline constexpr int kExitUsage = 64;

/// Sets the log level from QNNREPAIR_LOG (trace..off), defaulting to warn.
void configure_logging();

/// Entry point for the quantize / eval / localize / repair / experiment subcommands.
int cli_main(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

} // namespace qnnrepair

#endif // QNNREPAIR_CLI_HPP_
