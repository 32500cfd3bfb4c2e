#pragma once

#include "motioncache/analysis.hpp"
#include "motioncache/config.hpp"
#include "motioncache/error.hpp"
#include "motioncache/experiment.hpp"
#include "motioncache/fields.hpp"
#include "motioncache/flops.hpp"
#include "motioncache/importance.hpp"
#include "motioncache/kv_cache.hpp"
#include "motioncache/policy.hpp"
#include "motioncache/quality.hpp"
#include "motioncache/residual_cache.hpp"
#include "motioncache/rng.hpp"
#include "motioncache/runner.hpp"
#include "motioncache/scenario.hpp"
#include "motioncache/schedule.hpp"
#include "motioncache/shape.hpp"
#include "motioncache/tensor.hpp"
#include "motioncache/trace.hpp"
