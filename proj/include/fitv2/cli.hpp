// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fitv2/cli/commands.hpp"
#include "fitv2/cli/run_config.hpp"
