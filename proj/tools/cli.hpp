#pragma once

namespace afw2d {

/// Entry point of the command-line front end. Returns 0 on success, 2 on
/// invalid input (usage printed), 1 on a runtime failure.
int run_cli(int argc, const char* const* argv);

}  // namespace afw2d
