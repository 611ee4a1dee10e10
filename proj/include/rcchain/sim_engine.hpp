#pragma once
// Behavioral transient simulation of the RC chain with clocked comparators,
// inverter feedback, digital loop delay, element perturbations and thermal
// noise injection. Between events the linear dynamics are propagated with
// the exact zero-order-hold step operator.

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "rcchain/chain_model.hpp"
#include "rcchain/designer.hpp"
#include "rcchain/error.hpp"
#include "rcchain/rng.hpp"

namespace rcchain {

inline constexpr int kDefaultSubsteps = 16;
inline constexpr int kWarmupNyquistPeriods = 32;

struct ComparatorModel {
  std::vector<double> offsets;  // V, one per stage; empty means all zero
  double delay = 0.0;           // s, in [0, 1/f_s]

  double offset(std::size_t stage) const { return stage < offsets.size() ? offsets[stage] : 0.0; }
};

namespace input {
struct Sine {
  double amplitude = 1.0;
  double omega = 1.0;
  double phase = 0.0;
};
/// Uniform values in [-amplitude, amplitude], redrawn every hold_cycles clock cycles.
struct HeldRandom {
  double amplitude = 1.0;
  int hold_cycles = 1;
  std::uint64_t seed = 0;
};
struct Zero {};
/// One value per substep.
struct External {
  std::vector<double> samples;
};
}  // namespace input

using InputSignal = std::variant<input::Sine, input::HeldRandom, input::Zero, input::External>;

struct NoiseSpec {
  bool enabled = false;
  double temperature = 300.0;  // K
};

/// Levels of a held-random input, one per hold interval.
inline std::vector<double> held_levels(const input::HeldRandom& h, std::int64_t count) {
  Rng rng(h.seed);
  std::uniform_real_distribution<double> dist(-h.amplitude, h.amplitude);
  std::vector<double> out(static_cast<std::size_t>(count));
  for (auto& v : out) v = dist(rng);
  return out;
}

struct SimRecord {
  int n_stages = 0;
  std::int64_t n_cycles = 0;
  /// s_l[k] in {-1,+1}, channel-major: bits[l * n_cycles + k].
  std::vector<std::int8_t> bits;
  /// v_x at each clock edge before the decision, cycle-major: [k * N + l]. Empty when not recorded.
  std::vector<double> state_samples;
  /// max |v_x_l| over every substep of the run.
  std::vector<double> max_abs_state;
  nlohmann::json config;
  std::uint64_t seed = 0;
  int substeps_per_cycle = kDefaultSubsteps;
  int delay_substeps = 0;
  std::int64_t warmup_cycles = 0;

  bool has_states() const { return !state_samples.empty(); }
  std::int8_t bit(int stage, std::int64_t k) const {
    return bits[static_cast<std::size_t>(stage * n_cycles + k)];
  }
  double state(std::int64_t k, int stage) const {
    return state_samples[static_cast<std::size_t>(k * n_stages + stage)];
  }
};

/// Exact response of the linear dynamics over a step of length h with u
/// and the feedback voltages held constant.
struct StepOperator {
  Eigen::MatrixXd a_d;
  Eigen::VectorXd g_in;
  Eigen::MatrixXd g_ctl;
  double h = 0.0;
};

inline StepOperator discretize(const StateSpace& ss, double h) {
  detail::require(h > 0.0, "discretize: step must be positive");
  const int n = ss.n_stages();
  const int m = 2 * n + 1;
  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(m, m);
  aug.topLeftCorner(n, n) = ss.a_matrix * h;
  aug.block(0, n, n, 1) = ss.b_in * h;
  aug.block(0, n + 1, n, n) = ss.b_ctl * h;
  const Eigen::MatrixXd e = aug.exp();
  StepOperator op;
  op.a_d = e.topLeftCorner(n, n);
  op.g_in = e.block(0, n, n, 1);
  op.g_ctl = e.block(0, n + 1, n, n);
  op.h = h;
  return op;
}

namespace detail {

inline void to_json(nlohmann::json& j, const InputSignal& in) {
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, input::Sine>)
          j = {{"kind", "sine"}, {"amplitude", s.amplitude}, {"omega", s.omega}, {"phase", s.phase}};
        else if constexpr (std::is_same_v<T, input::HeldRandom>)
          j = {{"kind", "held_random"}, {"amplitude", s.amplitude}, {"hold_cycles", s.hold_cycles},
               {"seed", s.seed}};
        else if constexpr (std::is_same_v<T, input::Zero>)
          j = {{"kind", "zero"}};
        else
          j = {{"kind", "external"}, {"n_samples", s.samples.size()}};
      },
      in);
}

}  // namespace detail

/// Inverse of to_json for the generated inputs; external inputs carry no samples and are rejected.
inline InputSignal input_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "sine")
    return input::Sine{j.at("amplitude").get<double>(), j.at("omega").get<double>(), j.value("phase", 0.0)};
  if (kind == "held_random")
    return input::HeldRandom{j.at("amplitude").get<double>(), j.at("hold_cycles").get<int>(),
                             j.at("seed").get<std::uint64_t>()};
  if (kind == "zero") return input::Zero{};
  throw DomainError("input kind '" + kind + "' cannot be reconstructed from a record header");
}

namespace detail {

/// Evaluates the input at substep midpoints, advancing through held levels lazily.
class InputSampler {
 public:
  InputSampler(const InputSignal& in, double f_s, int substeps, std::int64_t n_cycles)
      : in_(in), f_s_(f_s), substeps_(substeps) {
    if (const auto* h = std::get_if<input::HeldRandom>(&in)) {
      require(h->hold_cycles >= 1, "held_random: hold_cycles must be >= 1");
      levels_ = held_levels(*h, (n_cycles + h->hold_cycles - 1) / h->hold_cycles);
    }
    if (const auto* e = std::get_if<input::External>(&in))
      require(static_cast<std::int64_t>(e->samples.size()) >= n_cycles * substeps,
              "external input: need one sample per substep");
  }

  /// Input at continuous time t inside cycle k (substep j).
  double at(std::int64_t k, int j, double t) const {
    return std::visit(
        [&](const auto& s) -> double {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, input::Sine>)
            return s.amplitude * std::sin(s.omega * t + s.phase);
          else if constexpr (std::is_same_v<T, input::HeldRandom>)
            return levels_[static_cast<std::size_t>(k / s.hold_cycles)];
          else if constexpr (std::is_same_v<T, input::Zero>)
            return 0.0;
          else
            return s.samples[static_cast<std::size_t>(k * substeps_ + j)];
        },
        in_);
  }

  double f_s() const { return f_s_; }

 private:
  const InputSignal& in_;
  double f_s_;
  int substeps_;
  std::vector<double> levels_;
};

inline nlohmann::json snapshot(const ElementValues& e, const ChainParameters& p,
                               const ComparatorModel& comp, const InputSignal& in,
                               std::int64_t n_cycles, const NoiseSpec& noise) {
  nlohmann::json j;
  j["params"] = p;
  j["elements"] = e;
  j["comparator"] = {{"offsets", comp.offsets}, {"delay", comp.delay}};
  nlohmann::json ij;
  to_json(ij, in);
  j["input"] = ij;
  j["n_cycles"] = n_cycles;
  j["noise"] = {{"enabled", noise.enabled}, {"temperature", noise.temperature}};
  return j;
}

inline int delay_to_substeps(double delay, double f_s, int substeps) {
  require(delay >= 0.0 && delay <= 1.0 / f_s * (1.0 + 1e-12),
          "ComparatorModel: delay must lie in [0, 1/f_s]");
  return std::clamp(static_cast<int>(std::lround(delay * f_s * substeps)), 0, substeps);
}

/// Sum of conductances at each node; the thermal current PSD is 4kT times this.
inline std::vector<double> node_conductance(const ElementValues& e) {
  const auto n = e.cap.size();
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i)
    g[i] = 1.0 / e.chain_r[i] + (i + 1 < n ? 1.0 / e.chain_r[i + 1] : 0.0) + 1.0 / e.fb_r[i];
  return g;
}

inline std::int8_t decide(double v) { return v >= 0.0 ? std::int8_t{1} : std::int8_t{-1}; }

}  // namespace detail

struct SimOptions {
  int substeps = kDefaultSubsteps;
  NoiseSpec noise;
  std::uint64_t seed = 0;
  bool record_states = true;
  /// When set, comparator decisions are replaced by these bits (channel-major, N x n_cycles).
  const std::vector<std::int8_t>* forced_bits = nullptr;
};

inline SimRecord simulate(const ElementValues& elements, const ChainParameters& params,
                          const ComparatorModel& comp, const InputSignal& in,
                          std::int64_t n_cycles, const SimOptions& opt) {
  validate(params);
  validate(elements);
  detail::require(elements.n_stages() == params.n_stages, "simulate: stage count mismatch");
  detail::require(opt.substeps >= 1, "simulate: substeps must be >= 1");
  detail::require(n_cycles >= 1, "simulate: n_cycles must be >= 1");
  detail::require(!opt.noise.enabled || opt.noise.temperature > 0.0,
                  "simulate: noise temperature must be positive");
  const int n = params.n_stages;
  if (opt.forced_bits)
    detail::require(static_cast<std::int64_t>(opt.forced_bits->size()) == n * n_cycles,
                    "simulate: forced bit count must be N * n_cycles");

  const double t_clk = 1.0 / params.f_s;
  const double h = t_clk / opt.substeps;
  const auto op = discretize(build_state_space(elements), h);
  const int delay_sub = detail::delay_to_substeps(comp.delay, params.f_s, opt.substeps);
  const detail::InputSampler sampler(in, params.f_s, opt.substeps, n_cycles);

  SimRecord rec;
  rec.n_stages = n;
  rec.n_cycles = n_cycles;
  rec.bits.resize(static_cast<std::size_t>(n * n_cycles));
  rec.max_abs_state.assign(static_cast<std::size_t>(n), 0.0);
  if (opt.record_states) rec.state_samples.resize(static_cast<std::size_t>(n * n_cycles));
  rec.config = detail::snapshot(elements, params, comp, in, n_cycles, opt.noise);
  rec.seed = opt.seed;
  rec.substeps_per_cycle = opt.substeps;
  rec.delay_substeps = delay_sub;
  rec.warmup_cycles = std::min<std::int64_t>(n_cycles, std::int64_t{kWarmupNyquistPeriods} * params.osr);

  Eigen::VectorXd noise_sd = Eigen::VectorXd::Zero(n);
  if (opt.noise.enabled) {
    const auto g = detail::node_conductance(elements);
    for (int i = 0; i < n; ++i) {
      const double psd = 4.0 * kBoltzmann * opt.noise.temperature * g[i];
      noise_sd(i) = std::sqrt(psd / (2.0 * elements.cap[i] * elements.cap[i]) * h);
    }
  }
  Rng noise_rng = make_stream(opt.seed, 1);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd next(n);
  // feedback voltage v_sbar = -s * v_max; before the first decision s = +1
  Eigen::VectorXd v_prev = Eigen::VectorXd::Constant(n, -params.v_max);
  Eigen::VectorXd v_new(n);

  for (std::int64_t k = 0; k < n_cycles; ++k) {
    if (!x.allFinite()) {
      std::ostringstream msg;
      msg << "simulation diverged at cycle " << k;
      throw DivergedError(msg.str(), k);
    }
    for (int l = 0; l < n; ++l) {
      if (opt.record_states) rec.state_samples[static_cast<std::size_t>(k * n + l)] = x(l);
      const std::int8_t s =
          opt.forced_bits ? (*opt.forced_bits)[static_cast<std::size_t>(l * n_cycles + k)]
                          : detail::decide(x(l) + comp.offset(static_cast<std::size_t>(l)));
      rec.bits[static_cast<std::size_t>(l * n_cycles + k)] = s;
      v_new(l) = -static_cast<double>(s) * params.v_max;
    }
    const double t0 = static_cast<double>(k) * t_clk;
    for (int j = 0; j < opt.substeps; ++j) {
      const Eigen::VectorXd& v = j < delay_sub ? v_prev : v_new;
      const double u = sampler.at(k, j, t0 + (j + 0.5) * h);
      next.noalias() = op.a_d * x;
      next.noalias() += op.g_in * u;
      next.noalias() += op.g_ctl * v;
      x.swap(next);
      if (opt.noise.enabled)
        for (int l = 0; l < n; ++l) x(l) += noise_sd(l) * gauss(noise_rng);
      for (int l = 0; l < n; ++l)
        rec.max_abs_state[static_cast<std::size_t>(l)] =
            std::max(rec.max_abs_state[static_cast<std::size_t>(l)], std::abs(x(l)));
    }
    v_prev = v_new;
  }
  if (!x.allFinite()) throw DivergedError("simulation diverged at final cycle", n_cycles);
  return rec;
}

inline SimRecord simulate(const ElementValues& elements, const ChainParameters& params,
                          const ComparatorModel& comp, const InputSignal& in,
                          std::int64_t n_cycles, int substeps, const NoiseSpec& noise,
                          std::uint64_t seed) {
  SimOptions opt;
  opt.substeps = substeps;
  opt.noise = noise;
  opt.seed = seed;
  return simulate(elements, params, comp, in, n_cycles, opt);
}

namespace detail {

/// Dormand-Prince 5(4) with mixed absolute/relative error control.
template <class Rhs>
void integrate_dp45(Rhs&& rhs, double t0, double t1, Eigen::VectorXd& x, double rtol, double atol,
                    double& h_hint, std::vector<double>& max_abs) {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                          b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                          e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
  const double span = t1 - t0;
  if (span <= 0.0) return;
  double t = t0;
  double h = std::min(h_hint > 0.0 ? h_hint : span, span);
  const double h_min = span * 1e-14;
  Eigen::VectorXd k1 = rhs(t, x), k2, k3, k4, k5, k6, k7, y;
  while (t < t1) {
    if (t + h > t1) h = t1 - t;
    if (h < h_min) throw NumericalError("oracle_integrate: step size underflow");
    k2 = rhs(t + c2 * h, x + h * (a21 * k1));
    k3 = rhs(t + c3 * h, x + h * (a31 * k1 + a32 * k2));
    k4 = rhs(t + c4 * h, x + h * (a41 * k1 + a42 * k2 + a43 * k3));
    k5 = rhs(t + c5 * h, x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    k6 = rhs(t + h, x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    y = x + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    k7 = rhs(t + h, y);
    const Eigen::VectorXd err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    double norm = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double sc = atol + rtol * std::max(std::abs(x(i)), std::abs(y(i)));
      norm = std::max(norm, std::abs(err(i)) / sc);
    }
    if (!std::isfinite(norm)) throw NumericalError("oracle_integrate: non-finite state");
    if (norm <= 1.0) {
      t = (t1 - t - h <= h_min) ? t1 : t + h;
      x = y;
      k1 = k7;
      for (Eigen::Index i = 0; i < x.size(); ++i)
        max_abs[static_cast<std::size_t>(i)] =
            std::max(max_abs[static_cast<std::size_t>(i)], std::abs(x(i)));
      h_hint = h;
    }
    const double factor = norm == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(norm, -0.2), 0.2, 5.0);
    h *= factor;
  }
}

}  // namespace detail

/// Validation oracle: integrates every inter-event interval with adaptive
/// Dormand-Prince at tolerance 1e-12, evaluating a sine input exactly.
/// Uses the same substep-rounded delay as simulate with `delay_grid` substeps.
inline SimRecord oracle_integrate(const ElementValues& elements, const ChainParameters& params,
                                  const ComparatorModel& comp, const InputSignal& in,
                                  std::int64_t n_cycles, const NoiseSpec& noise, std::uint64_t seed,
                                  int delay_grid = kDefaultSubsteps) {
  validate(params);
  validate(elements);
  detail::require(!noise.enabled, "oracle_integrate: noise injection is not supported");
  detail::require(!std::holds_alternative<input::External>(in),
                  "oracle_integrate: external input is not supported");
  const int n = params.n_stages;
  const auto ss = build_state_space(elements);
  const double t_clk = 1.0 / params.f_s;
  const int delay_sub = detail::delay_to_substeps(comp.delay, params.f_s, delay_grid);
  const double t_switch = t_clk * delay_sub / delay_grid;
  const detail::InputSampler sampler(in, params.f_s, 1, n_cycles);

  SimRecord rec;
  rec.n_stages = n;
  rec.n_cycles = n_cycles;
  rec.bits.resize(static_cast<std::size_t>(n * n_cycles));
  rec.state_samples.resize(static_cast<std::size_t>(n * n_cycles));
  rec.max_abs_state.assign(static_cast<std::size_t>(n), 0.0);
  rec.config = detail::snapshot(elements, params, comp, in, n_cycles, noise);
  rec.seed = seed;
  rec.substeps_per_cycle = 0;
  rec.delay_substeps = delay_sub;
  rec.warmup_cycles = std::min<std::int64_t>(n_cycles, std::int64_t{kWarmupNyquistPeriods} * params.osr);

  const double rtol = 1e-12;
  const double atol = 1e-12 * params.v_max * params.delta_n();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd v_prev = Eigen::VectorXd::Constant(n, -params.v_max);
  Eigen::VectorXd v_new(n);
  double h_hint = 0.0;
  for (std::int64_t k = 0; k < n_cycles; ++k) {
    for (int l = 0; l < n; ++l) {
      rec.state_samples[static_cast<std::size_t>(k * n + l)] = x(l);
      const std::int8_t s = detail::decide(x(l) + comp.offset(static_cast<std::size_t>(l)));
      rec.bits[static_cast<std::size_t>(l * n_cycles + k)] = s;
      v_new(l) = -static_cast<double>(s) * params.v_max;
    }
    const double t0 = static_cast<double>(k) * t_clk;
    auto segment = [&](double a, double b, const Eigen::VectorXd& v) {
      const Eigen::VectorXd drive = ss.b_ctl * v;
      auto rhs = [&](double t, const Eigen::VectorXd& state) -> Eigen::VectorXd {
        return ss.a_matrix * state + ss.b_in * sampler.at(k, 0, t) + drive;
      };
      detail::integrate_dp45(rhs, a, b, x, rtol, atol, h_hint, rec.max_abs_state);
    };
    segment(t0, t0 + t_switch, v_prev);
    segment(t0 + t_switch, t0 + t_clk, v_new);
    v_prev = v_new;
  }
  return rec;
}

enum class PerturbMode { PerElement, PerProduct };

/// Multiplies targeted values by independent uniform factors in
/// [1 - fraction, 1 + fraction]. PerElement perturbs every resistor and
/// capacitor; PerProduct perturbs only each node's capacitor, so every RC
/// time constant at a node moves together and resistor ratios are kept.
inline ElementValues perturb_elements(const ElementValues& nominal, double fraction, PerturbMode mode,
                                     std::uint64_t seed) {
  detail::require(fraction >= 0.0 && fraction < 1.0, "perturb_elements: fraction must lie in [0,1)");
  validate(nominal);
  ElementValues out = nominal;
  if (fraction == 0.0) return out;
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(1.0 - fraction, 1.0 + fraction);
  if (mode == PerturbMode::PerElement) {
    for (auto& r : out.chain_r) r *= dist(rng);
    for (auto& r : out.fb_r) r *= dist(rng);
  }
  for (auto& c : out.cap) c *= dist(rng);
  return out;
}

/// Offsets drawn uniformly in [-fraction, fraction] * v_max.
inline std::vector<double> random_offsets(int n_stages, double fraction, double v_max,
                                          std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(-fraction * v_max, fraction * v_max);
  std::vector<double> out(static_cast<std::size_t>(n_stages));
  for (auto& v : out) v = fraction == 0.0 ? 0.0 : dist(rng);
  return out;
}

}  // namespace rcchain
