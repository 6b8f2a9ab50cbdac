#pragma once

#include <iosfwd>

namespace availnet {

/// Entry point of the `availnet` tool. Returns the process exit status:
/// 0 on success, 1 on a runtime failure, 2 on a usage error. Failures print
/// one line "error: <category>: <detail>" to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace availnet
