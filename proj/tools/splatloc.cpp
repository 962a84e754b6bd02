#include <iostream>
#include <string>
#include <vector>

#include "splatloc/cli.hpp"

int main(int argc, char** argv) {
    return splatloc::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
