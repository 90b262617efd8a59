#include <iostream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "paraphrase/cli.hpp"

int main(int argc, char** argv) {
#if defined(__GLIBC__)
    // Activations are a few hundred KB each; without this glibc returns them
    // to the kernel after every step and spends a quarter of the time in mmap.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    return paraphrase::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
