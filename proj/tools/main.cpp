#include <string>
#include <vector>

#include "pxe/cli.hpp"

int main(int argc, char** argv) {
    return pxe::run_command(std::vector<std::string>(argv + 1, argv + argc));
}
