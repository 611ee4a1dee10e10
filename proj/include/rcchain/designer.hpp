#pragma once
// Analytical design machinery: input transfer function, expected SNR,
// (N, OSR) design-space search and thermal-noise budgeting.

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <vector>

#include "rcchain/chain_model.hpp"
#include "rcchain/error.hpp"
#include "rcchain/quadrature.hpp"

namespace rcchain {

inline constexpr double kBoltzmann = 1.380649e-23;  // J/K
inline constexpr int kQuadratureNodes = 1024;

struct DesignTarget {
  double target_snr_db = 0.0;
  double omega_b = 1.0;
  double delta_n = 1e-3;
  int n_min = 2, n_max = 10;
  int osr_min = 10, osr_max = 32;
  double v_max = 1.0;
  double epsilon = kDefaultEpsilon;
};

struct SnrSurface {
  std::vector<int> n_values;
  std::vector<int> osr_values;
  std::vector<double> snr_db;  // row-major [n][osr]

  double at(std::size_t n_idx, std::size_t osr_idx) const {
    return snr_db[n_idx * osr_values.size() + osr_idx];
  }
};

struct NoiseBudget {
  double phi = 0.0;
  double v_bar_sq = 0.0;  // V^2
  double cap_value = 0.0;
  std::vector<double> r_ladder;  // R, R/kappa_1 .. R/kappa_N
  double temperature = 0.0;
};

inline double snr_to_enob(double snr_db) { return (snr_db - 1.76) / 6.02; }
inline double enob_to_snr(double enob) { return 6.02 * enob + 1.76; }

/// Determinant of the dimensionless tridiagonal matrix with diagonal
/// j*omega*tau + xi_l and unit off-diagonals, by the three-term recursion.
inline std::complex<double> chain_determinant(const ChainParameters& p, double omega) {
  const auto xi = p.xi();
  std::complex<double> prev{0.0, 0.0}, cur{1.0, 0.0};
  const std::complex<double> jwt{0.0, omega * p.tau};
  for (double x : xi) {
    const auto next = (jwt + x) * cur - prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

/// |G(omega)| from v_u to v_{x_N} with all comparators inactive.
inline double transfer_magnitude(const ChainParameters& p, double omega) {
  return 1.0 / std::abs(chain_determinant(p, omega));
}

namespace detail {
inline double snr_bracket(const ChainParameters& p, int nodes) {
  const double integral = integrate_composite(
      [&](double w) { return std::norm(chain_determinant(p, w)); }, 0.0, p.omega_b, nodes);
  return std::pow(p.delta, 2.0 * p.n_stages) / p.omega_b * integral;
}
}  // namespace detail

/// Expected SNR in dB: epsilon * OSR / (delta^{2N}/omega_B * int_0^{omega_B} |G|^-2).
inline double expected_snr(const ChainParameters& p) {
  validate(p);
  const double coarse = detail::snr_bracket(p, kQuadratureNodes);
  const double fine = detail::snr_bracket(p, 2 * kQuadratureNodes);
  const double shift_db = std::abs(10.0 * std::log10(fine / coarse));
  if (!(shift_db <= 0.1)) throw NumericalError("expected_snr: quadrature did not converge");
  return 10.0 * std::log10(p.epsilon * p.osr / coarse);
}

inline ChainParameters cell_parameters(const DesignTarget& t, int n, int osr) {
  auto p = build_nominal_config(n, osr, std::pow(t.delta_n, 1.0 / n), t.omega_b, t.v_max);
  p.epsilon = t.epsilon;
  return p;
}

inline void validate(const DesignTarget& t) {
  detail::require(t.delta_n > 0.0 && t.delta_n < 1.0, "DesignTarget: delta_n must lie in (0,1)");
  detail::require(t.omega_b > 0.0 && t.v_max > 0.0, "DesignTarget: omega_b and v_max must be positive");
  detail::require(t.n_min >= 1 && t.osr_min >= 1, "DesignTarget: ranges must start at >= 1");
}

inline SnrSurface snr_surface(const DesignTarget& t) {
  validate(t);
  SnrSurface s;
  for (int n = t.n_min; n <= t.n_max; ++n) s.n_values.push_back(n);
  for (int o = t.osr_min; o <= t.osr_max; ++o) s.osr_values.push_back(o);
  s.snr_db.reserve(s.n_values.size() * s.osr_values.size());
  for (int n : s.n_values)
    for (int o : s.osr_values) s.snr_db.push_back(expected_snr(cell_parameters(t, n, o)));
  return s;
}

/// Lowest OSR meeting the target; ties broken by fewest stages.
inline ChainParameters design_search(const DesignTarget& t) {
  validate(t);
  detail::require(t.n_min <= t.n_max && t.osr_min <= t.osr_max, "design_search: empty range");
  double best = -std::numeric_limits<double>::infinity();
  for (int o = t.osr_min; o <= t.osr_max; ++o) {
    for (int n = t.n_min; n <= t.n_max; ++n) {
      auto p = cell_parameters(t, n, o);
      const double snr = expected_snr(p);
      if (snr >= t.target_snr_db) return p;
      best = std::max(best, snr);
    }
  }
  std::ostringstream msg;
  msg << "no feasible configuration: target " << t.target_snr_db
      << " dB exceeds the best achievable " << best << " dB in range";
  throw InfeasibleError(msg.str(), best);
}

/// e_N (j omega I - A)^{-1} for the nominal chain with capacitors of value cap.
inline Eigen::RowVectorXcd output_resolvent_row(const ChainParameters& p, double omega,
                                                double cap) {
  const auto ss = build_state_space(nominal_elements(p, p.tau / cap));
  const int n = ss.n_stages();
  Eigen::MatrixXcd m = -ss.a_matrix.cast<std::complex<double>>();
  m.diagonal().array() += std::complex<double>{0.0, omega};
  Eigen::VectorXcd e_n = Eigen::VectorXcd::Zero(n);
  e_n(n - 1) = 1.0;
  const Eigen::VectorXcd y = m.transpose().partialPivLu().solve(e_n);
  if (!y.allFinite()) throw NumericalError("noise_transfer: resolvent solve failed");
  return y.transpose();
}

/// |G_bar_l(omega)| for every stage, in ohm.
inline std::vector<double> noise_transfer_all(const ChainParameters& p, double omega, double cap) {
  detail::require(cap > 0.0, "noise_transfer: cap must be positive");
  const auto row = output_resolvent_row(p, omega, cap);
  const double r = p.tau / cap;
  const std::complex<double> g = row(0) / (r * cap);
  std::vector<double> out(static_cast<std::size_t>(p.n_stages));
  for (int l = 0; l < p.n_stages; ++l) out[static_cast<std::size_t>(l)] = std::abs(row(l) / cap / g);
  return out;
}

/// |G_bar_l(omega)| for stage l in 1..N.
inline double noise_transfer(const ChainParameters& p, int stage, double omega, double cap) {
  detail::require(stage >= 1 && stage <= p.n_stages, "noise_transfer: stage out of range");
  return noise_transfer_all(p, omega, cap)[static_cast<std::size_t>(stage - 1)];
}

inline double phi_factor(const ChainParameters& p, double cap) {
  validate(p);
  detail::require(cap > 0.0, "phi_factor: cap must be positive");
  const double r = p.tau / cap;
  const auto xi = p.xi();
  auto weighted_energy = [&](int nodes) {
    const double integral = integrate_composite(
        [&](double w) {
          const auto g = noise_transfer_all(p, w, cap);
          double sum = 0.0;
          for (std::size_t l = 0; l < g.size(); ++l) sum += xi[l] * (g[l] / r) * (g[l] / r);
          return sum;
        },
        0.0, p.omega_b, nodes);
    return integral / p.omega_b;
  };
  const double coarse = weighted_energy(kQuadratureNodes);
  const double fine = weighted_energy(2 * kQuadratureNodes);
  if (!(std::abs(10.0 * std::log10(fine / coarse)) <= 0.1))
    throw NumericalError("phi_factor: quadrature did not converge");
  return coarse;
}

/// Capacitor size at which the input-referred thermal noise equals the
/// conversion error of a full-scale sine at the given SNR.
inline NoiseBudget size_components(const ChainParameters& p, double achieved_snr_db,
                                   double temperature) {
  detail::require(temperature > 0.0, "size_components: temperature must be positive");
  validate(p);
  NoiseBudget b;
  b.temperature = temperature;
  b.v_bar_sq = 0.5 * p.v_max * p.v_max * std::pow(10.0, -achieved_snr_db / 10.0);
  b.phi = phi_factor(p, 1.0);
  const double f_b = p.omega_b / (2.0 * std::numbers::pi);
  b.cap_value = 4.0 * kBoltzmann * temperature * p.tau * f_b * b.phi / b.v_bar_sq;
  const double r = p.tau / b.cap_value;
  b.r_ladder.push_back(r);
  for (double k : p.kappas) b.r_ladder.push_back(r / k);
  return b;
}

inline void write_surface_csv(std::ostream& os, const SnrSurface& s) {
  os << "N,OSR,snr_db\n";
  for (std::size_t i = 0; i < s.n_values.size(); ++i)
    for (std::size_t j = 0; j < s.osr_values.size(); ++j)
      os << s.n_values[i] << ',' << s.osr_values[j] << ',' << s.at(i, j) << '\n';
}

/// Columns omega_norm, then |G_bar_l|/R in dB for each stage.
inline void write_noise_transfer_csv(std::ostream& os, const ChainParameters& p, double cap,
                                     const std::vector<double>& omega_norm) {
  os << "omega_norm";
  for (int l = 1; l <= p.n_stages; ++l) os << ",G_" << l << "_db";
  os << '\n';
  const double r = p.tau / cap;
  for (double wn : omega_norm) {
    os << wn;
    for (double g : noise_transfer_all(p, wn * p.omega_b, cap)) os << ',' << 20.0 * std::log10(g / r);
    os << '\n';
  }
}

}  // namespace rcchain
