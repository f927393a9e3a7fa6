#ifndef ELLADA_SCHEDULES_HPP
#define ELLADA_SCHEDULES_HPP

#include <array>
#include <cmath>

namespace ellada {

enum class Variant { Ell, Ella, Ellada };

/// Outer tolerances eps_i^k = base_i / decay^{k-1}, the final certificate
/// tolerances, the map pi linking eps5 = pi(eps4), and the rule producing
/// the next inner NLP tolerance from the dual-residual norm.
struct ToleranceSchedule {
  std::array<double, 4> outer_base{1e-2, 1e-2, 1e-1, 1e-8};  // eps1..eps4 bases
  double outer_decay = 2.0;
  std::array<double, 6> final_tols{1e-4, 1e-4, 1e-3, 1e-6, 1e-6, 1e-6};
  double pi_ratio = 1e-3;  // pi(t) = pi_ratio * t

  enum class InnerRule { Quadratic, Proportional, Fixed };
  InnerRule inner_rule = InnerRule::Quadratic;
  double inner_coeff = 40.0;

  double pi(double t) const { return pi_ratio * t; }
  double eps1_k(int k) const { return outer_base[0] / std::pow(outer_decay, k - 1); }
  double eps2_k(int k) const { return outer_base[1] / std::pow(outer_decay, k - 1); }
  double eps3_k(int k) const { return outer_base[2] / std::pow(outer_decay, k - 1); }
  double eps4_k(int k) const { return outer_base[3] / std::pow(outer_decay, k - 1); }
  double eps5_k(int k) const { return pi(eps4_k(k)); }

  double next_eps4(double eps1_residual, double eps4k, double eps4_current) const {
    switch (inner_rule) {
      case InnerRule::Quadratic:
        return std::max(eps4k, inner_coeff * eps1_residual * eps1_residual);
      case InnerRule::Proportional:
        return std::max(eps4k, std::min(eps4_current, inner_coeff * eps1_residual));
      case InnerRule::Fixed:
      default:
        return eps4k;
    }
  }
};

/// Barrier parameter rule b^{k+1} = min(b_max, max(b_min, coeff (eps3^k)^2));
/// `fixed` pins b (the single-layer emulation).
struct BarrierSchedule {
  bool fixed = false;
  double fixed_value = 1e-8;
  double initial = 1e-1;
  double b_min = 1e-4;
  double b_max = 1e-1;
  double coeff = 25.0;

  double first() const { return fixed ? fixed_value : initial; }
  double next(double eps3_k) const {
    if (fixed) return fixed_value;
    return std::min(b_max, std::max(b_min, coeff * eps3_k * eps3_k));
  }
};

/// The benchmark settings: ELL runs eps1^k = eps2^k = 1e-2/2^{k-1},
/// eps3^k = 1e-1/2^{k-1} to finals (1e-4, 1e-4, 1e-3); ELLA/ELLADA run
/// eps1^k = eps2^k = 1e3 eps3^k = eps4^k = 100/2^{k-1},
/// eps4^{k,r} = 1e3 eps5^{k,r} = max(eps4^k, 40 (eps1^{k,r})^2), finals
/// eps1 = eps2 = eps4 = 1e3 eps3 = 1, with
/// b^{k+1} = min(1e-1, max(1e-4, 25 (eps3^k)^2)).
std::pair<ToleranceSchedule, BarrierSchedule> default_schedules(Variant v);

}  // namespace ellada

#endif
