#pragma once

#include "cupid/choice_models.hpp"
#include "cupid/conj_ot.hpp"
#include "cupid/discretized.hpp"
#include "cupid/estimation.hpp"
#include "cupid/identification.hpp"
#include "cupid/io.hpp"
#include "cupid/lbfgs.hpp"
#include "cupid/market.hpp"
#include "cupid/rng.hpp"
#include "cupid/simplex.hpp"
#include "cupid/simulation.hpp"
#include "cupid/sinkhorn.hpp"
#include "cupid/solvers.hpp"
#include "cupid/stats.hpp"
