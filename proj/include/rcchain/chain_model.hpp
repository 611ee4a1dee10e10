#pragma once
// Architectural parameters, element netlist and state-space model of the
// RC-chain converter: a ladder of N series resistors with shunt capacitors,
// where node l is additionally driven through R/kappa_l by an inverter that
// follows a clocked comparator sensing the same node.

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "rcchain/error.hpp"

namespace rcchain {

inline constexpr double kDefaultEpsilon = 13.5;  // calibrated against simulation

struct ChainParameters {
  int n_stages = 1;
  int osr = 1;
  double delta = 0.5;
  double omega_b = 1.0;  // rad/s
  double v_max = 1.0;    // V
  std::vector<double> kappas;
  double tau = 1.0;  // s
  double f_s = 1.0;  // Hz
  double epsilon = kDefaultEpsilon;

  /// delta^N, the last comparator's sensitivity as a fraction of v_max.
  double delta_n() const { return std::pow(delta, n_stages); }
  /// xi_l = kappa_l + 2 for interior nodes, kappa_N + 1 for the last node.
  std::vector<double> xi() const {
    std::vector<double> out(kappas.size());
    for (std::size_t i = 0; i < kappas.size(); ++i)
      out[i] = kappas[i] + (i + 1 < kappas.size() ? 2.0 : 1.0);
    return out;
  }
};

struct ElementValues {
  std::vector<double> chain_r;  // ohm, R between node l-1 and node l
  std::vector<double> fb_r;     // ohm, feedback resistor at node l
  std::vector<double> cap;      // F

  int n_stages() const { return static_cast<int>(cap.size()); }
};

/// dx/dt = A x + b_in u + b_ctl v_sbar, with x the capacitor voltages.
struct StateSpace {
  Eigen::MatrixXd a_matrix;
  Eigen::VectorXd b_in;
  Eigen::MatrixXd b_ctl;  // diagonal
  int out_index = 0;      // zero-based, always N-1

  int n_stages() const { return static_cast<int>(b_in.size()); }
};

inline std::vector<double> compute_kappas(double delta, int n_stages) {
  detail::require(delta > 0.0 && delta < 1.0, "compute_kappas: delta must lie in (0,1)");
  detail::require(n_stages >= 1, "compute_kappas: n_stages must be >= 1");
  std::vector<double> k(static_cast<std::size_t>(n_stages));
  const double base = 1.0 + delta * delta - delta;
  double scale = 1.0;
  for (auto& v : k) {
    v = scale * base;
    scale *= delta;
  }
  return k;
}

inline double compute_tau(double delta, double omega_b, int osr) {
  detail::require(delta > 0.0 && delta < 1.0, "compute_tau: delta must lie in (0,1)");
  detail::require(omega_b > 0.0, "compute_tau: omega_b must be positive");
  detail::require(osr >= 1, "compute_tau: osr must be >= 1");
  return std::numbers::pi * (2.0 * (1.0 + delta * delta) - delta) /
         (delta * omega_b * static_cast<double>(osr));
}

/// Clock rate implied by OSR = f_s * pi / omega_b.
inline double clock_rate(int osr, double omega_b) {
  return static_cast<double>(osr) * omega_b / std::numbers::pi;
}

inline ChainParameters build_nominal_config(int n_stages, int osr, double delta, double omega_b,
                                            double v_max) {
  detail::require(v_max > 0.0, "build_nominal_config: v_max must be positive");
  ChainParameters p;
  p.n_stages = n_stages;
  p.osr = osr;
  p.delta = delta;
  p.omega_b = omega_b;
  p.v_max = v_max;
  p.kappas = compute_kappas(delta, n_stages);
  p.tau = compute_tau(delta, omega_b, osr);
  p.f_s = clock_rate(osr, omega_b);
  p.epsilon = kDefaultEpsilon;
  return p;
}

/// Throws DomainError describing the first violated invariant.
inline void validate(const ChainParameters& p) {
  using detail::require;
  require(p.n_stages >= 1, "ChainParameters: n_stages must be >= 1");
  require(p.osr >= 1, "ChainParameters: osr must be >= 1");
  require(p.delta > 0.0 && p.delta < 1.0, "ChainParameters: delta must lie in (0,1)");
  require(p.omega_b > 0.0 && p.v_max > 0.0 && p.tau > 0.0 && p.f_s > 0.0 && p.epsilon > 0.0,
          "ChainParameters: omega_b, v_max, tau, f_s, epsilon must be positive");
  require(static_cast<int>(p.kappas.size()) == p.n_stages,
          "ChainParameters: kappas must have n_stages entries");
  for (std::size_t i = 0; i < p.kappas.size(); ++i) {
    require(p.kappas[i] > 0.0 && p.kappas[i] < 1.0, "ChainParameters: kappas must lie in (0,1)");
    if (i > 0) require(p.kappas[i] < p.kappas[i - 1], "ChainParameters: kappas must decrease");
  }
  const double fs = clock_rate(p.osr, p.omega_b);
  require(std::abs(p.f_s - fs) <= 1e-12 * fs, "ChainParameters: f_s must equal OSR*omega_b/pi");
}

inline void validate(const ElementValues& e) {
  const auto n = e.cap.size();
  detail::require(n >= 1 && e.chain_r.size() == n && e.fb_r.size() == n,
                  "ElementValues: chain_r, fb_r and cap must have equal non-zero length");
  for (std::size_t i = 0; i < n; ++i)
    detail::require(e.chain_r[i] > 0.0 && e.fb_r[i] > 0.0 && e.cap[i] > 0.0,
                    "ElementValues: all element values must be strictly positive");
}

inline ElementValues nominal_elements(const ChainParameters& p, double r_value) {
  detail::require(r_value > 0.0, "nominal_elements: r_value must be positive");
  const auto n = static_cast<std::size_t>(p.n_stages);
  ElementValues e;
  e.chain_r.assign(n, r_value);
  e.cap.assign(n, p.tau / r_value);
  e.fb_r.resize(n);
  for (std::size_t i = 0; i < n; ++i) e.fb_r[i] = r_value / p.kappas[i];
  return e;
}

/// Nodal analysis of the ladder. Node 0 is the ideal input source.
inline StateSpace build_state_space(const ElementValues& e) {
  validate(e);
  const int n = e.n_stages();
  StateSpace ss;
  ss.a_matrix = Eigen::MatrixXd::Zero(n, n);
  ss.b_in = Eigen::VectorXd::Zero(n);
  ss.b_ctl = Eigen::MatrixXd::Zero(n, n);
  ss.out_index = n - 1;
  for (int i = 0; i < n; ++i) {
    const double c = e.cap[i];
    const double g_left = 1.0 / e.chain_r[i];
    const double g_right = i + 1 < n ? 1.0 / e.chain_r[i + 1] : 0.0;
    const double g_fb = 1.0 / e.fb_r[i];
    ss.a_matrix(i, i) = -(g_left + g_right + g_fb) / c;
    if (i > 0)
      ss.a_matrix(i, i - 1) = g_left / c;
    else
      ss.b_in(0) = g_left / c;
    if (i + 1 < n) ss.a_matrix(i, i + 1) = g_right / c;
    ss.b_ctl(i, i) = g_fb / c;
  }
  return ss;
}

// JSON: field names as in the structs, SI units.

inline void to_json(nlohmann::json& j, const ChainParameters& p) {
  j = nlohmann::json{{"n_stages", p.n_stages}, {"osr", p.osr},         {"delta", p.delta},
                     {"omega_b", p.omega_b},   {"v_max", p.v_max},     {"kappas", p.kappas},
                     {"tau", p.tau},           {"f_s", p.f_s},         {"epsilon", p.epsilon}};
}

inline void from_json(const nlohmann::json& j, ChainParameters& p) {
  j.at("n_stages").get_to(p.n_stages);
  j.at("osr").get_to(p.osr);
  j.at("delta").get_to(p.delta);
  j.at("omega_b").get_to(p.omega_b);
  j.at("v_max").get_to(p.v_max);
  j.at("kappas").get_to(p.kappas);
  j.at("tau").get_to(p.tau);
  j.at("f_s").get_to(p.f_s);
  p.epsilon = j.value("epsilon", kDefaultEpsilon);
}

inline void to_json(nlohmann::json& j, const ElementValues& e) {
  j = nlohmann::json{{"chain_r", e.chain_r}, {"fb_r", e.fb_r}, {"cap", e.cap}};
}

inline void from_json(const nlohmann::json& j, ElementValues& e) {
  j.at("chain_r").get_to(e.chain_r);
  j.at("fb_r").get_to(e.fb_r);
  j.at("cap").get_to(e.cap);
}

}  // namespace rcchain
