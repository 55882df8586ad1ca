#include <malloc.h>

#include <iostream>
#include <string>
#include <vector>

#include "cli.hpp"

int main(int argc, char** argv) {
  // Training allocates the same multi-megabyte activations every step; keep
  // them on the heap instead of paying mmap/page-fault churn per step.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  std::vector<std::string> args(argv, argv + argc);
  return xfer::cli::run(args, std::cout, std::cerr);
}
