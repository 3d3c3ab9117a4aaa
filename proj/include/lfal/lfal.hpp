#pragma once
// Everything in one include.
#include "lfal/numerics.hpp"
#include "lfal/skeleton_data.hpp"
#include "lfal/display_solver.hpp"
#include "lfal/invertible_net.hpp"
#include "lfal/graph_conv.hpp"
#include "lfal/training.hpp"
#include "lfal/active_learning.hpp"
#include "lfal/experiment.hpp"
