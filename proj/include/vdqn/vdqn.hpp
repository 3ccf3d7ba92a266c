#pragma once

#include "vdqn/ad.hpp"
#include "vdqn/envs.hpp"
#include "vdqn/errors.hpp"
#include "vdqn/harness.hpp"
#include "vdqn/metrics.hpp"
#include "vdqn/qlearn.hpp"
#include "vdqn/replay.hpp"
#include "vdqn/rng.hpp"
#include "vdqn/vagents.hpp"
#include "vdqn/varinf.hpp"
#include "vdqn/version.hpp"
