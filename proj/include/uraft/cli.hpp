#pragma once

#include <iosfwd>

namespace uraft::cli {

// Exit codes shared by every command.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 2;    // bad arguments or input data
inline constexpr int kRuntime = 3;  // numerical or runtime failure

/// Entry point of the `uraft` tool. Machine-readable results go to `out`,
/// diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace uraft::cli
