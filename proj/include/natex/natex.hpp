#pragma once

// Umbrella header for the natural-experiment estimation toolkit.

#include "natex/bench.hpp"
#include "natex/config.hpp"
#include "natex/csv.hpp"
#include "natex/dataset.hpp"
#include "natex/errors.hpp"
#include "natex/estimators.hpp"
#include "natex/learners.hpp"
#include "natex/metrics.hpp"
#include "natex/rng.hpp"
#include "natex/variance.hpp"
