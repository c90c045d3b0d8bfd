#include "ksem/cli.hpp"

int main(int argc, char** argv)
{
    return ksem::run_cli(std::vector<std::string>(argv, argv + argc));
}
