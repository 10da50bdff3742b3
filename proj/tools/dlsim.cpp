#include "dlsim/harness/cli.hpp"

int main(int argc, char** argv) { return dlsim::harness::cli_main(argc, argv); }
