#pragma once

#include <iosfwd>

namespace growth::cli {

// Exit codes: 0 success, 1 runtime error, 2 usage error.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace growth::cli
