#pragma once

#include "oodcal/analyze.hpp"
#include "oodcal/calibrate.hpp"
#include "oodcal/dataset.hpp"
#include "oodcal/error.hpp"
#include "oodcal/evaluate.hpp"
#include "oodcal/rng.hpp"
#include "oodcal/scores.hpp"
#include "oodcal/simulate.hpp"
