#pragma once

// Umbrella header: numerical laboratory for stationary measures of random
// matrix products on projective space.

#include "projmeas/classify.hpp"
#include "projmeas/ensemble.hpp"
#include "projmeas/errors.hpp"
#include "projmeas/geometry.hpp"
#include "projmeas/invariant.hpp"
#include "projmeas/io.hpp"
#include "projmeas/lyapunov.hpp"
#include "projmeas/measure.hpp"
#include "projmeas/parallel.hpp"
#include "projmeas/rational.hpp"
#include "projmeas/rng.hpp"
#include "projmeas/scenario.hpp"
#include "projmeas/stationary.hpp"
