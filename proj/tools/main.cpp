#include "commands.hpp"
#include "lpad/runtime.hpp"

int main(int argc, char** argv) {
  lpad::tune_runtime();
  return lpad::cli::run(argc, argv);
}
