#pragma once

#include <iosfwd>

namespace sanet::cli {

/// Entry point of the `sanet` tool: subcommands synth, train, cv, infer and
/// evaluate. Returns 0 on success, 1 for invalid arguments or data, 2 for
/// runtime failures (I/O, divergence).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sanet::cli
