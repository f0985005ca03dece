#pragma once

#include "pxai/explainers.hpp"

namespace pxai::detail {

void fill_base(ExplanationBase& out, const Predictor& p, const Instance& x, int target_class,
               const ExplainerConfig& cfg);

}  // namespace pxai::detail
