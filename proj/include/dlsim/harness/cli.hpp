#pragma once

namespace dlsim::harness {

// Entry point of the dlsim command line: run, attack, report, validate.
// Returns the process exit code: 0 ok, 2 config error, 3 precondition
// error, 4 I/O error, 1 anything else.
int cli_main(int argc, char** argv);

}  // namespace dlsim::harness
