#pragma once

#include "neuromod/error.hpp"
#include "neuromod/numerics.hpp"
#include "neuromod/projection.hpp"
#include "neuromod/gate.hpp"
#include "neuromod/adapter.hpp"
#include "neuromod/losses.hpp"
#include "neuromod/tasks.hpp"
#include "neuromod/optim.hpp"
#include "neuromod/merging.hpp"
#include "neuromod/continual.hpp"
#include "neuromod/io.hpp"
#include "neuromod/experiment.hpp"
