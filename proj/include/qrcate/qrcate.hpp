#pragma once

#include "qrcate/bench.hpp"
#include "qrcate/csv.hpp"
#include "qrcate/dataset.hpp"
#include "qrcate/error.hpp"
#include "qrcate/inference.hpp"
#include "qrcate/learners.hpp"
#include "qrcate/pseudo.hpp"
#include "qrcate/regressors.hpp"
#include "qrcate/rng.hpp"
#include "qrcate/simgen.hpp"
#include "qrcate/star.hpp"
