#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "wsl/kernels.hpp"

int main(int argc, char** argv) {
    wsl::tune_allocator();
    doctest::Context ctx(argc, argv);
    return ctx.run();
}
