// Copyright (C) 2026 The ppmunet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PPMUNET_PPMUNET_HPP
#define PPMUNET_PPMUNET_HPP

#include "ppmunet/adam.hpp"
#include "ppmunet/checkpoint.hpp"
#include "ppmunet/dataset.hpp"
#include "ppmunet/denormals.hpp"
#include "ppmunet/gradcheck.hpp"
#include "ppmunet/loss.hpp"
#include "ppmunet/metrics.hpp"
#include "ppmunet/network.hpp"
#include "ppmunet/nt4.hpp"
#include "ppmunet/ops.hpp"
#include "ppmunet/postproc.hpp"
#include "ppmunet/rng.hpp"
#include "ppmunet/synth.hpp"
#include "ppmunet/tensor.hpp"
#include "ppmunet/training.hpp"

#endif  // PPMUNET_PPMUNET_HPP
