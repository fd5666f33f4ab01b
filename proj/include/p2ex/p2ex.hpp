#pragma once

#include "p2ex/checkpoint.hpp"
#include "p2ex/config.hpp"
#include "p2ex/csv.hpp"
#include "p2ex/data.hpp"
#include "p2ex/error.hpp"
#include "p2ex/explain.hpp"
#include "p2ex/losses.hpp"
#include "p2ex/model.hpp"
#include "p2ex/ops.hpp"
#include "p2ex/rng.hpp"
#include "p2ex/tensor.hpp"
#include "p2ex/training.hpp"
