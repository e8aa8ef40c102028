// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fitv2/flow/objective.hpp"
#include "fitv2/flow/ode.hpp"
#include "fitv2/flow/sampling.hpp"
#include "fitv2/flow/train.hpp"
