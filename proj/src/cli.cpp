#include "rdsal/cli.hpp"

namespace rdsal {

int cli_main(int, const char* const*) { return 1; }

}  // namespace rdsal
