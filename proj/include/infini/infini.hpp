// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header.

#ifndef INFINI_INFINI_HPP_
#define INFINI_INFINI_HPP_

#include "infini/attention.hpp"
#include "infini/checkpoint.hpp"
#include "infini/config.hpp"
#include "infini/data.hpp"
#include "infini/eval.hpp"
#include "infini/model.hpp"
#include "infini/optim.hpp"
#include "infini/rope.hpp"
#include "infini/telemetry.hpp"
#include "infini/tensor.hpp"
#include "infini/train.hpp"

#endif  // INFINI_INFINI_HPP_
