#pragma once

#include "sqlgen/autodiff.hpp"
#include "sqlgen/config.hpp"
#include "sqlgen/core.hpp"
#include "sqlgen/decoding.hpp"
#include "sqlgen/gradcheck.hpp"
#include "sqlgen/error.hpp"
#include "sqlgen/metrics.hpp"
#include "sqlgen/numeric.hpp"
#include "sqlgen/objectives.hpp"
#include "sqlgen/optim.hpp"
#include "sqlgen/oracle.hpp"
#include "sqlgen/params.hpp"
#include "sqlgen/qmodel.hpp"
#include "sqlgen/rewards.hpp"
#include "sqlgen/rng.hpp"
#include "sqlgen/task.hpp"
#include "sqlgen/trainer.hpp"
