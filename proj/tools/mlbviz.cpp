#include <iostream>
#include <string>
#include <vector>

#include "mlbviz/cli.hpp"
#include "mlbviz/trainer.hpp"

int main(int argc, char** argv) {
  mlbviz::retain_heap_between_samples();
  std::vector<std::string> args(argv + 1, argv + argc);
  return mlbviz::cli::run(args, std::cout, std::cerr);
}
