#include "epibias/cli.hpp"

#include <string>
#include <vector>

int main(int argc, char** argv)
{
    return epibias::cli::run_command(std::vector<std::string>(argv + 1, argv + argc));
}
