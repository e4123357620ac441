// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

namespace mixpipe {

inline constexpr int kExitUsage = 2;

std::string cli_usage();
// Returns the process exit code; never throws.
int run_cli(int argc, char** argv);

}  // namespace mixpipe
