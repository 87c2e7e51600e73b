#pragma once

// Umbrella header.

#include "arl/core.hpp"
#include "arl/eval.hpp"
#include "arl/experiment.hpp"
#include "arl/io.hpp"
#include "arl/losses.hpp"
#include "arl/model.hpp"
#include "arl/rng.hpp"
#include "arl/sampling.hpp"
#include "arl/synth.hpp"
#include "arl/train.hpp"
