#include <aps/cli.hpp>

int main(int argc, char** argv)
{
    return aps::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
