// Command line front end. Subcommands are wired up in cli.hpp; this file
// only owns main() and the exit-code mapping.

#include <cstdio>
#include <exception>

#include "agw/cli.hpp"
#include "agw/errors.hpp"

int main(int argc, char** argv) {
  try {
    return agw::cli_main(argc, argv);
  } catch (const agw::numerical_error& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 4;
  } catch (const agw::data_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
