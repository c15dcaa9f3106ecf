#pragma once

#include "uwsc/autodiff/checkpoint.hpp"
#include "uwsc/autodiff/conv.hpp"
#include "uwsc/autodiff/grad_check.hpp"
#include "uwsc/autodiff/module.hpp"
#include "uwsc/autodiff/ops.hpp"
#include "uwsc/autodiff/tensor.hpp"
