#pragma once

#include "appendix.hpp"
#include "consistency.hpp"
#include "errors.hpp"
#include "forward.hpp"
#include "map_estimation.hpp"
#include "noise.hpp"
#include "potential.hpp"
#include "prior.hpp"
#include "quadrature.hpp"
#include "rng.hpp"
#include "sampling.hpp"
#include "stats.hpp"
#include "types.hpp"
