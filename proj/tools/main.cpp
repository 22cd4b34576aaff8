#include "rdsal/cli.hpp"

int main(int argc, char** argv) { return rdsal::cli_main(argc, argv); }
