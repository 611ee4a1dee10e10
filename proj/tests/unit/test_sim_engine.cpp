#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "rcchain/sim_engine.hpp"

using namespace rcchain;
using Catch::Approx;

namespace {
const double kOmegaB = 2.0 * std::numbers::pi * 1e7;

ChainParameters reference_config(double v_max = 1.0) {
  return build_nominal_config(4, 26, std::pow(1e-3, 0.25), kOmegaB, v_max);
}

input::Sine half_band_sine(const ChainParameters& p, double amplitude = 1.0) {
  return input::Sine{amplitude * p.v_max, 0.5 * p.omega_b, 0.3};
}

double max_state_error(const SimRecord& a, const SimRecord& b) {
  double e = 0.0;
  for (std::size_t i = 0; i < a.state_samples.size(); ++i)
    e = std::max(e, std::abs(a.state_samples[i] - b.state_samples[i]));
  return e;
}
}  // namespace

TEST_CASE("step operator semigroup", "[sim_engine]") {
  const auto p = reference_config();
  const auto ss = build_state_space(nominal_elements(p, 1e4));
  const double h1 = 0.3 / p.f_s, h2 = 0.45 / p.f_s;
  const auto a = discretize(ss, h1), b = discretize(ss, h2), ab = discretize(ss, h1 + h2);
  CHECK((b.a_d * a.a_d - ab.a_d).norm() <= 1e-11 * ab.a_d.norm());
  const Eigen::VectorXd g_in = b.a_d * a.g_in + b.g_in;
  CHECK((g_in - ab.g_in).norm() <= 1e-11 * ab.g_in.norm());
  const Eigen::MatrixXd g_ctl = b.a_d * a.g_ctl + b.g_ctl;
  CHECK((g_ctl - ab.g_ctl).norm() <= 1e-11 * ab.g_ctl.norm());
}

TEST_CASE("step operator for small steps", "[sim_engine]") {
  const auto p = reference_config();
  const auto ss = build_state_space(nominal_elements(p, 1e4));
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(4, 4);
  double prev = 0.0;
  for (double h : {1e-12, 1e-13}) {
    const auto op = discretize(ss, h);
    const double err = (op.a_d - eye - ss.a_matrix * h).norm();
    if (prev > 0.0) CHECK(err == Approx(prev / 100.0).epsilon(0.05));
    prev = err;
  }
  CHECK_THROWS_AS(discretize(ss, 0.0), DomainError);
}

TEST_CASE("single-stage step operator closed form", "[sim_engine]") {
  const auto p = build_nominal_config(1, 10, 0.4, kOmegaB, 1.0);
  const auto ss = build_state_space(nominal_elements(p, 1e3));
  const double xi = p.xi()[0];
  const double h = 0.37 * p.tau;
  const auto op = discretize(ss, h);
  const double ad = std::exp(-xi * h / p.tau);
  CHECK(op.a_d(0, 0) == Approx(ad).epsilon(1e-13));
  CHECK(op.g_in(0) == Approx((1.0 - ad) / xi).epsilon(1e-12));
  CHECK(op.g_ctl(0, 0) == Approx(p.kappas[0] * (1.0 - ad) / xi).epsilon(1e-12));
}

TEST_CASE("unloaded single node settles to the divider value", "[sim_engine]") {
  const auto p = build_nominal_config(1, 10, 0.4, kOmegaB, 1.0);
  const auto op = discretize(build_state_space(nominal_elements(p, 1e3)), 0.1 * p.tau);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
  const Eigen::VectorXd v = Eigen::VectorXd::Zero(1);
  for (int i = 0; i < 2000; ++i) x = op.a_d * x + op.g_in * 0.7 + op.g_ctl * v;
  CHECK(x(0) == Approx(0.7 / (1.0 + p.kappas[0])).epsilon(1e-12));
}

TEST_CASE("zero input stays inside the swing bounds", "[sim_engine]") {
  const auto p = reference_config();
  const auto rec = simulate(nominal_elements(p, 1e4), p, {}, input::Zero{}, 4096 * 26, SimOptions{});
  for (int l = 0; l < 4; ++l) CHECK(rec.max_abs_state[l] <= std::pow(p.delta, l + 1) * p.v_max);
}

TEST_CASE("full-scale sines stay inside the swing bounds", "[sim_engine]") {
  int configs = 0;
  for (double dn : {1e-3, 1e-4})
    for (int n : {2, 3, 4, 6})
      for (int osr : {12, 26}) {
        const auto p = build_nominal_config(n, osr, std::pow(dn, 1.0 / n), kOmegaB, 1.0);
        SimOptions opt;
        opt.record_states = false;
        const auto rec = simulate(nominal_elements(p, 1e4), p, {}, half_band_sine(p), 512 * osr, opt);
        for (int l = 0; l < n; ++l) CHECK(rec.max_abs_state[l] <= std::pow(p.delta, l + 1) * p.v_max);
        ++configs;
      }
  CHECK(configs >= 10);
}

TEST_CASE("simulation is deterministic in the seed", "[sim_engine]") {
  const auto p = reference_config();
  const auto e = nominal_elements(p, 1e4);
  SimOptions opt;
  opt.noise.enabled = true;
  opt.seed = 99;
  const auto a = simulate(e, p, {}, half_band_sine(p), 3000, opt);
  const auto b = simulate(e, p, {}, half_band_sine(p), 3000, opt);
  CHECK(a.bits == b.bits);
  CHECK(a.state_samples == b.state_samples);
  opt.seed = 100;
  const auto c = simulate(e, p, {}, half_band_sine(p), 3000, opt);
  CHECK(a.state_samples != c.state_samples);
}

TEST_CASE("analog path is affine under forced decisions", "[sim_engine]") {
  const auto p = reference_config();
  const auto e = nominal_elements(p, 1e4);
  const std::int64_t n = 600;
  const auto ref = simulate(e, p, {}, half_band_sine(p, 0.8), n, SimOptions{});
  SimOptions forced;
  forced.forced_bits = &ref.bits;
  auto run = [&](double extra) {
    std::vector<double> u(static_cast<std::size_t>(n * forced.substeps));
    for (std::size_t i = 0; i < u.size(); ++i) {
      const double t = (static_cast<double>(i) + 0.5) / forced.substeps / p.f_s;
      u[i] = 0.8 * std::sin(0.5 * p.omega_b * t + 0.3) + extra * std::cos(0.13 * p.omega_b * t);
    }
    return simulate(e, p, {}, input::External{u}, n, forced);
  };
  const auto base = run(0.0), one = run(1e-3), two = run(2e-3);
  CHECK(base.bits == ref.bits);
  for (std::size_t i = 0; i < base.state_samples.size(); ++i) {
    const double d1 = one.state_samples[i] - base.state_samples[i];
    const double d2 = two.state_samples[i] - base.state_samples[i];
    CHECK(std::abs(d2 - 2.0 * d1) <= 1e-10);
  }
}

TEST_CASE("scaling v_max scales states and keeps decisions", "[sim_engine]") {
  const auto p1 = reference_config(1.0), p2 = reference_config(2.0);
  ComparatorModel c1, c2;
  c1.offsets = {1e-3, -2e-4, 5e-5, -1e-5};
  for (double o : c1.offsets) c2.offsets.push_back(2.0 * o);
  const auto a = simulate(nominal_elements(p1, 1e4), p1, c1, half_band_sine(p1), 5000, SimOptions{});
  const auto b = simulate(nominal_elements(p2, 1e4), p2, c2, half_band_sine(p2), 5000, SimOptions{});
  CHECK(a.bits == b.bits);
  for (std::size_t i = 0; i < a.state_samples.size(); ++i)
    CHECK(b.state_samples[i] == Approx(2.0 * a.state_samples[i]).margin(1e-15));
}

TEST_CASE("oracle agreement on piecewise-constant input", "[sim_engine]") {
  const auto p = reference_config();
  const auto e = nominal_elements(p, 1e4);
  const auto fast = simulate(e, p, {}, input::Zero{}, 100, SimOptions{});
  const auto ref = oracle_integrate(e, p, {}, input::Zero{}, 100, NoiseSpec{}, 0);
  CHECK(max_state_error(fast, ref) <= 1e-11 * p.v_max);
  CHECK(fast.bits == ref.bits);
}

TEST_CASE("oracle agreement and hold-error convergence on a sine", "[sim_engine]") {
  const auto p = reference_config();
  const auto e = nominal_elements(p, 1e4);
  const auto in = half_band_sine(p);
  const auto ref = oracle_integrate(e, p, {}, in, 100, NoiseSpec{}, 0);
  SimOptions o16, o64;
  o16.substeps = 16;
  o64.substeps = 64;
  const auto s16 = simulate(e, p, {}, in, 100, o16);
  const auto s64 = simulate(e, p, {}, in, 100, o64);
  REQUIRE(s16.bits == ref.bits);
  REQUIRE(s64.bits == ref.bits);
  const double e16 = max_state_error(s16, ref), e64 = max_state_error(s64, ref);
  // midpoint-hold error of a full-scale tone at omega_B / 2 is about 2e-6 V at 16 substeps
  CHECK(e16 <= 3e-6 * p.v_max);
  CHECK(e16 / e64 >= 8.0);
}

TEST_CASE("loop delay is rounded to the substep grid", "[sim_engine]") {
  const auto p = reference_config();
  const auto e = nominal_elements(p, 1e4);
  ComparatorModel c;
  c.delay = 0.2 / p.f_s;
  const auto rec = simulate(e, p, c, input::Zero{}, 50, SimOptions{});
  CHECK(rec.delay_substeps == 3);
  c.delay = 1.5 / p.f_s;
  CHECK_THROWS_AS(simulate(e, p, c, input::Zero{}, 50, SimOptions{}), DomainError);
}

TEST_CASE("thermal noise reaches kT/C on an isolated node", "[sim_engine]") {
  const auto p = build_nominal_config(1, 26, 0.5, kOmegaB, 1.0);
  const auto e = nominal_elements(p, 1e4);
  const std::int64_t n = 40000;
  const std::vector<std::int8_t> ones(static_cast<std::size_t>(n), 1);
  SimOptions opt;
  opt.noise.enabled = true;
  opt.noise.temperature = 300.0;
  opt.seed = 5;
  opt.forced_bits = &ones;
  const auto rec = simulate(e, p, {}, input::Zero{}, n, opt);
  double mean = 0.0;
  for (std::int64_t k = 1000; k < n; ++k) mean += rec.state(k, 0);
  mean /= static_cast<double>(n - 1000);
  double var = 0.0;
  for (std::int64_t k = 1000; k < n; ++k) var += std::pow(rec.state(k, 0) - mean, 2);
  var /= static_cast<double>(n - 1001);
  CHECK(var == Approx(kBoltzmann * 300.0 / e.cap[0]).epsilon(0.1));
}

TEST_CASE("element perturbation", "[sim_engine]") {
  const auto p = reference_config();
  const auto e = nominal_elements(p, 1e4);
  const auto same = perturb_elements(e, 0.0, PerturbMode::PerElement, 1);
  CHECK(same.chain_r == e.chain_r);
  CHECK(same.fb_r == e.fb_r);
  CHECK(same.cap == e.cap);

  const auto a = perturb_elements(e, 0.2, PerturbMode::PerElement, 3);
  const auto a2 = perturb_elements(e, 0.2, PerturbMode::PerElement, 3);
  CHECK(a.cap == a2.cap);
  CHECK(a.fb_r == a2.fb_r);
  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(a.chain_r[i] / e.chain_r[i] - 1.0) <= 0.2);
    CHECK(std::abs(a.fb_r[i] / e.fb_r[i] - 1.0) <= 0.2);
    CHECK(std::abs(a.cap[i] / e.cap[i] - 1.0) <= 0.2);
  }
  int distinct = 0;
  for (std::uint64_t s = 0; s < 100; ++s)
    if (perturb_elements(e, 0.2, PerturbMode::PerElement, s).cap != perturb_elements(e, 0.2, PerturbMode::PerElement, s + 100).cap)
      ++distinct;
  CHECK(distinct == 100);

  const auto prod = perturb_elements(e, 0.2, PerturbMode::PerProduct, 3);
  CHECK(prod.chain_r == e.chain_r);
  CHECK(prod.fb_r == e.fb_r);
  CHECK(prod.cap != e.cap);
  CHECK_THROWS_AS(perturb_elements(e, 1.0, PerturbMode::PerElement, 0), DomainError);
}

TEST_CASE("offsets are drawn in range", "[sim_engine]") {
  const auto o = random_offsets(6, 0.2, 1.5, 9);
  REQUIRE(o.size() == 6);
  for (double v : o) CHECK(std::abs(v) <= 0.3);
  CHECK(random_offsets(6, 0.2, 1.5, 9) == o);
  for (double v : random_offsets(3, 0.0, 1.0, 9)) CHECK(v == 0.0);
}

TEST_CASE("held-random input levels are uniform and held", "[sim_engine]") {
  const auto p = reference_config();
  const input::HeldRandom in{p.v_max, 26, 77};
  const auto rec = simulate(nominal_elements(p, 1e4), p, {}, in, 26 * 40, SimOptions{});
  const auto levels = held_levels(in, 40);
  for (double v : levels) CHECK(std::abs(v) <= p.v_max);
  CHECK(rec.config.at("input").at("kind") == "held_random");
  const auto back = std::get<input::HeldRandom>(input_from_json(rec.config.at("input")));
  CHECK(back.seed == 77);
  CHECK(back.hold_cycles == 26);
}
