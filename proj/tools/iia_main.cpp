#include <iostream>

#include "cli/commands.hpp"
#include "iia/parallel.hpp"

int main(int argc, char** argv) {
  iia::configure_threads_from_env();
  return iia::cli::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
