// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fitv2/adapt/freeze.hpp"
#include "fitv2/adapt/posttrain.hpp"
