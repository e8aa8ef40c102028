// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fitv2/pipeline/batch.hpp"
#include "fitv2/pipeline/dataset_io.hpp"
#include "fitv2/pipeline/preprocess.hpp"
#include "fitv2/pipeline/synth.hpp"
