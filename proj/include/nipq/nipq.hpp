#pragma once

#include "nipq/analysis.hpp"
#include "nipq/checkpoint.hpp"
#include "nipq/config.hpp"
#include "nipq/constraints.hpp"
#include "nipq/data.hpp"
#include "nipq/experiment.hpp"
#include "nipq/gradcheck.hpp"
#include "nipq/model.hpp"
#include "nipq/ops.hpp"
#include "nipq/optim.hpp"
#include "nipq/quantizer.hpp"
#include "nipq/rng.hpp"
#include "nipq/tensor.hpp"
#include "nipq/trainer.hpp"
