#include <iostream>

#include "latinv/cli.hpp"

int main(int argc, char** argv) {
  return latinv::cli_dispatch({argv + 1, argv + argc}, std::cout, std::cerr);
}
