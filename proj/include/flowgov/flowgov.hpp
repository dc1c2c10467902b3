#pragma once

// Umbrella header for the full simulator and control stack. The HTTP role
// backend lives in backends_http.hpp and is not pulled in here.

#include "action.hpp"
#include "backends.hpp"
#include "campaigns.hpp"
#include "constitution.hpp"
#include "digest.hpp"
#include "env.hpp"
#include "evidence.hpp"
#include "experiment.hpp"
#include "fast_loop.hpp"
#include "governance.hpp"
#include "metrics.hpp"
#include "mlp.hpp"
#include "ppo.hpp"
#include "reward.hpp"
#include "rng.hpp"
#include "risk.hpp"
#include "simcore.hpp"
#include "state.hpp"
#include "telemetry.hpp"
#include "trace.hpp"
