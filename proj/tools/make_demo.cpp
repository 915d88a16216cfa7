// Writes the synthetic demo workspace (images, fixtures, scripts, dataset).
#include <iostream>

#include "demo_scene.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_demo <out-dir>\n";
    return 2;
  }
  try {
    vasa::demo::write_demo(argv[1]);
  } catch (const std::exception& e) {
    std::cerr << "make_demo: " << e.what() << "\n";
    return 1;
  }
  std::cout << "demo written to " << argv[1] << "\n";
  return 0;
}
