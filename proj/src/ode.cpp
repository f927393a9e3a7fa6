#include "ellada/ode.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ellada {

namespace {

// Dormand-Prince coefficients
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

}  // namespace

Vector integrate_rk45(const std::function<Vector(double, const Vector&)>& f, Vector y, double t0,
                      double t1, double rtol, double atol) {
  double t = t0;
  double h = (t1 - t0) / 16.0;
  const double hmin = (t1 - t0) * 1e-14;
  int rejects_in_a_row = 0;

  while (t < t1) {
    h = std::min(h, t1 - t);
    Vector k1 = f(t, y);
    Vector k2 = f(t + c2 * h, y + h * (a21 * k1));
    Vector k3 = f(t + c3 * h, y + h * (a31 * k1 + a32 * k2));
    Vector k4 = f(t + c4 * h, y + h * (a41 * k1 + a42 * k2 + a43 * k3));
    Vector k5 = f(t + c5 * h, y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    Vector k6 = f(t + h, y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    Vector y5 = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    Vector k7 = f(t + h, y5);
    Vector err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

    double scale = 0.0;
    for (int i = 0; i < y.size(); ++i) {
      double s = atol + rtol * std::max(std::abs(y[i]), std::abs(y5[i]));
      scale = std::max(scale, std::abs(err[i]) / s);
    }
    if (scale <= 1.0) {
      t += h;
      y = y5;
      rejects_in_a_row = 0;
      h *= std::min(5.0, 0.9 * std::pow(std::max(scale, 1e-10), -0.2));
    } else {
      h *= std::max(0.1, 0.9 * std::pow(scale, -0.2));
      if (++rejects_in_a_row > 60 || h < hmin) {
        throw std::runtime_error("rk45 step size underflow");
      }
    }
  }
  return y;
}

}  // namespace ellada
