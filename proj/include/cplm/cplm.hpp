#pragma once

#include "cplm/cp_model.hpp"
#include "cplm/damped_solver.hpp"
#include "cplm/error.hpp"
#include "cplm/image.hpp"
#include "cplm/jacobian.hpp"
#include "cplm/lm.hpp"
#include "cplm/report.hpp"
#include "cplm/tensor.hpp"
