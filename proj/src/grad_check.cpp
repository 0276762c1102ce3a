#include "refiner/grad_check.hpp"

#include <cmath>

namespace refiner {

double grad_check(const ScalarFn& f, const Tensor& point, double h,
                  double floor) {
  Tape tape;
  const NodeId x = tape.leaf(point);
  const NodeId y = f(tape, x);
  tape.backward(y);
  const Tensor analytic = tape.grad(x);

  auto eval = [&](const Tensor& at) {
    Tape t;
    return t.scalar(f(t, t.leaf(at)));
  };

  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe.data[i] = point.data[i] + h;
    const double hi = eval(probe);
    probe.data[i] = point.data[i] - h;
    const double lo = eval(probe);
    probe.data[i] = point.data[i];
    const double numeric = (hi - lo) / (2.0 * h);
    const double denom =
        std::max({std::abs(analytic.data[i]), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(analytic.data[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace refiner
