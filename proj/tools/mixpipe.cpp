// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mixpipe/cli.hpp"

int main(int argc, char** argv) { return mixpipe::run_cli(argc, argv); }
