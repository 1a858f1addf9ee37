#pragma once

#include <string>
#include <vector>

namespace felab {

// Entry point behind main(): parses one subcommand out of {gen, import,
// pretrain, modify, sweep, knn, eval, gradcheck}, runs that pipeline stage,
// and returns the process exit code: 0 success, 2 configuration error,
// 3 I/O error, 4 numeric failure, 1 anything else. Failures also print a
// one-line JSON error record to stderr.
int run_command(int argc, const char* const* argv);
int run_command(const std::vector<std::string>& args);

}  // namespace felab
