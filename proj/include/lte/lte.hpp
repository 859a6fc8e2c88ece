#pragma once

// Umbrella header.

#include "lte/analysis.hpp"
#include "lte/cli.hpp"
#include "lte/costmodel.hpp"
#include "lte/data.hpp"
#include "lte/error.hpp"
#include "lte/init.hpp"
#include "lte/io.hpp"
#include "lte/layers.hpp"
#include "lte/linalg.hpp"
#include "lte/matrix.hpp"
#include "lte/network.hpp"
#include "lte/optim.hpp"
#include "lte/quantize.hpp"
#include "lte/random.hpp"
#include "lte/run_analysis.hpp"
#include "lte/training.hpp"
