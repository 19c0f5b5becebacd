// SPDX-License-Identifier: Apache-2.0
#include "dynmoe/cli/commands.hpp"

int main(int argc, char** argv) { return dynmoe::cli::cli_main(argc, argv); }
