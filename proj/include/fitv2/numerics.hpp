// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fitv2/numerics/ops.hpp"
#include "fitv2/numerics/optim.hpp"
#include "fitv2/numerics/tensor.hpp"
