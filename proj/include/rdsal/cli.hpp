#pragma once

namespace rdsal {

// Entry point shared by the rdsal binary and the test suites.
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 verification failure.
int cli_main(int argc, const char* const* argv);

}  // namespace rdsal
