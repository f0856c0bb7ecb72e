#pragma once

#include "hoe/error.hpp"
#include "hoe/numkernel.hpp"
#include "hoe/simplex.hpp"
#include "hoe/adapters.hpp"
#include "hoe/policy.hpp"
#include "hoe/hoe_router.hpp"
#include "hoe/morl.hpp"
#include "hoe/trainer.hpp"
#include "hoe/pareto.hpp"
#include "hoe/checkpoint.hpp"
#include "hoe/config.hpp"
#include "hoe/svg.hpp"
#include "hoe/pipeline.hpp"
