#pragma once

#include <iosfwd>

namespace ffebm::cli {

/// Runs one `ffebm` invocation. Exit status: 0 on success, 1 for usage, config or data
/// errors, 2 for numerical divergence. Errors are reported on `err` as one JSON line.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ffebm::cli
