// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchcast/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return patchcast::cli_dispatch(argc, argv, std::cout, std::cerr); }
