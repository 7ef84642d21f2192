#include <iostream>

#include "refocus/cli.hpp"
#include "refocus/serve.hpp"

int main(int argc, char** argv) {
  return refocus::cli::run(argc, argv, std::cout, std::cerr, refocus::service::serve_blocking);
}
