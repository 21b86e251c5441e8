#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace cplm::cli {

// Stable process exit codes.
enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kInput = 2,
  kOutput = 3,
  kDivergence = 4,
};

// Keeps large solver buffers on the heap instead of fresh mmap regions; a
// multi-megabyte Jacobian rebuilt every iteration otherwise pays a page fault
// per 4 KiB page.
void tune_allocator();

// Runs the command line `args` (args[0] is the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cplm::cli
