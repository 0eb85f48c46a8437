#include "qnnrepair/cli.hpp"

#include <iostream>

int main(int argc, char **argv)
{
    return qnnrepair::cli_main(argc, argv, std::cout, std::cerr);
}
