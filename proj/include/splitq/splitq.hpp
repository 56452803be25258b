// Copyright 2026 The SplitQ Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splitq/calibrate.hpp"
#include "splitq/errors.hpp"
#include "splitq/gradient.hpp"
#include "splitq/layer.hpp"
#include "splitq/layer_io.hpp"
#include "splitq/lowrank.hpp"
#include "splitq/matrix.hpp"
#include "splitq/mocd.hpp"
#include "splitq/partition.hpp"
#include "splitq/quantizer.hpp"
#include "splitq/report.hpp"
#include "splitq/synth.hpp"
#include "splitq/tensor_io.hpp"
#include "splitq/transform.hpp"
