// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fitv2/blocks/accounting.hpp"
#include "fitv2/blocks/checkpoint.hpp"
#include "fitv2/blocks/config.hpp"
#include "fitv2/blocks/model.hpp"
#include "fitv2/blocks/tokens.hpp"
