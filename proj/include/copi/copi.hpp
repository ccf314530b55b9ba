#pragma once

// Umbrella header: the whole library is header-only.

#include "copi/analysis.hpp"
#include "copi/checkpoint.hpp"
#include "copi/data.hpp"
#include "copi/decorr_lab.hpp"
#include "copi/errors.hpp"
#include "copi/learning.hpp"
#include "copi/matrix.hpp"
#include "copi/network.hpp"
#include "copi/rng.hpp"
