#pragma once

// Umbrella header of the solver library.

#include "spde/analysis.hpp"
#include "spde/checkpoint.hpp"
#include "spde/config.hpp"
#include "spde/errors.hpp"
#include "spde/io.hpp"
#include "spde/network.hpp"
#include "spde/optimizer.hpp"
#include "spde/paths.hpp"
#include "spde/problem.hpp"
#include "spde/regression.hpp"
#include "spde/rng.hpp"
#include "spde/scheme.hpp"
#include "spde/tensor.hpp"
#include "spde/time_grid.hpp"
