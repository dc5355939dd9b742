#pragma once

#include "irr/errors.hpp"
#include "irr/rng.hpp"
#include "irr/dataset.hpp"
#include "irr/corruption.hpp"
#include "irr/imputation.hpp"
#include "irr/kernel.hpp"
#include "irr/solver.hpp"
#include "irr/theory.hpp"
#include "irr/bench.hpp"
#include "irr/io.hpp"
