#pragma once

#include "errors.hpp"
#include "rng.hpp"
#include "neural.hpp"
#include "proclivity.hpp"
#include "model.hpp"
#include "dataset.hpp"
#include "training.hpp"
#include "synthgen.hpp"
#include "eval.hpp"
