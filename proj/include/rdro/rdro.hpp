#pragma once

#include "io.hpp"
#include "losses.hpp"
#include "numeric.hpp"
#include "optim.hpp"
#include "parallel.hpp"
#include "policy.hpp"
#include "ratios.hpp"
#include "table.hpp"
#include "theory.hpp"
#include "world.hpp"
#include "world_io.hpp"
