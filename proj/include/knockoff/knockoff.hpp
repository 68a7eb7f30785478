#pragma once

#include "knockoff/error.hpp"
#include "knockoff/numkernel.hpp"
#include "knockoff/knockoff_core.hpp"
#include "knockoff/statistics.hpp"
#include "knockoff/selection.hpp"
#include "knockoff/group_select.hpp"
#include "knockoff/rng.hpp"
#include "knockoff/simlab.hpp"
#include "knockoff/io.hpp"
