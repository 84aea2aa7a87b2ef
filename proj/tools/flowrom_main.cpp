#include <string>
#include <vector>

#include "flowrom/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return flowrom::cli::run(args);
}
