#pragma once

// Umbrella header: the whole library.

#include "omgd/analysis.hpp"
#include "omgd/config.hpp"
#include "omgd/decomposition.hpp"
#include "omgd/harness.hpp"
#include "omgd/layered_model.hpp"
#include "omgd/lisa.hpp"
#include "omgd/masks.hpp"
#include "omgd/objectives.hpp"
#include "omgd/optimizer.hpp"
#include "omgd/rng.hpp"
#include "omgd/schedules.hpp"
#include "omgd/trace.hpp"
#include "omgd/version.hpp"
