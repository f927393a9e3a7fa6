#ifndef ELLADA_ODE_HPP
#define ELLADA_ODE_HPP

#include "ellada/problem.hpp"

#include <functional>

namespace ellada {

/// Adaptive Dormand-Prince 5(4) step-doubling integrator for the plant
/// simulation between sampling instants.
Vector integrate_rk45(const std::function<Vector(double, const Vector&)>& f, Vector y0, double t0,
                      double t1, double rtol = 1e-8, double atol = 1e-10);

}  // namespace ellada

#endif
