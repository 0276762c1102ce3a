#pragma once

#include <functional>

#include "refiner/tape.hpp"

namespace refiner {

// Scalar-valued function of one tensor, expressed as a tape program.
using ScalarFn = std::function<NodeId(Tape&, NodeId point)>;

// Compares the tape gradient of f at `point` against central finite
// differences, coordinate by coordinate, and returns the largest relative
// error. Relative error uses max(|analytic|, |numeric|, `floor`) as the
// denominator so near-zero coordinates do not blow up the ratio.
double grad_check(const ScalarFn& f, const Tensor& point, double h = 1e-5,
                  double floor = 1e-6);

}  // namespace refiner
