// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

#include "fitv2/cli/app.hpp"

int main(int argc, char** argv) { return fitv2::run_cli(std::vector<std::string>(argv + 1, argv + argc)); }
