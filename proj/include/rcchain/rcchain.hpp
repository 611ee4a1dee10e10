#pragma once

#include "rcchain/chain_model.hpp"
#include "rcchain/designer.hpp"
#include "rcchain/error.hpp"
#include "rcchain/experiment.hpp"
#include "rcchain/io.hpp"
#include "rcchain/metrics.hpp"
#include "rcchain/quadrature.hpp"
#include "rcchain/recon.hpp"
#include "rcchain/rng.hpp"
#include "rcchain/sim_engine.hpp"
