#pragma once

#include "birm/annotate.hpp"
#include "birm/bench.hpp"
#include "birm/corpus.hpp"
#include "birm/env.hpp"
#include "birm/error.hpp"
#include "birm/json_types.hpp"
#include "birm/method.hpp"
#include "birm/parallel.hpp"
#include "birm/remote_policy.hpp"
#include "birm/rng.hpp"
#include "birm/scoring.hpp"
#include "birm/search.hpp"
#include "birm/supervisor.hpp"
