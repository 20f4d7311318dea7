#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "lpad/runtime.hpp"

int main(int argc, char** argv) {
  lpad::tune_runtime();
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
