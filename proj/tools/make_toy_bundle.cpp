// Regenerates the toy fixture bundle used by the test suite.
#include <iostream>

#include "neuroaudit/toy_bundle.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_toy_bundle OUTPUT_DIR\n";
    return 1;
  }
  try {
    neuroaudit::toy::write_bundle(argv[1]);
  } catch (const std::exception& e) {
    std::cerr << "make_toy_bundle: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
