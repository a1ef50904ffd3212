#pragma once

#include "ife/core.hpp"
#include "ife/matrix_core.hpp"
#include "ife/penalty.hpp"
#include "ife/panel.hpp"
#include "ife/sqrt_estimator.hpp"
#include "ife/rank_tools.hpp"
#include "ife/two_stage.hpp"
#include "ife/diagnostics.hpp"
#include "ife/simulation.hpp"
#include "ife/io.hpp"
