#include "deconf/cli.hpp"

int main(int argc, char** argv) {
  return deconf::cli::cli_main(argc, argv);
}
