#pragma once

#include "pbs/align/grad_check.hpp"
#include "pbs/align/losses.hpp"
#include "pbs/align/resampler.hpp"
#include "pbs/align/tensor.hpp"
