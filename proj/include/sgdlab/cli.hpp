#pragma once

#include <iosfwd>

namespace sgdlab {

// Exit codes: 0 success, 1 validation error, 2 numeric failure.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sgdlab
