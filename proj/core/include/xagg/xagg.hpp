#pragma once

// Umbrella header.

#include "xagg/aggregate.hpp"
#include "xagg/attack.hpp"
#include "xagg/dataio.hpp"
#include "xagg/deriv.hpp"
#include "xagg/errors.hpp"
#include "xagg/evaluate.hpp"
#include "xagg/explain.hpp"
#include "xagg/graph.hpp"
#include "xagg/heatmap.hpp"
#include "xagg/model.hpp"
#include "xagg/rng.hpp"
#include "xagg/segment.hpp"
#include "xagg/tensor.hpp"
