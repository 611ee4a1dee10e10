#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "rcchain/experiment.hpp"

using namespace rcchain;
using Catch::Approx;

namespace {
const double kOmegaB = 2.0 * std::numbers::pi * 1e7;

DecimatedControls random_controls(int n, std::int64_t m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  DecimatedControls d;
  d.values.resize(n, m);
  for (int l = 0; l < n; ++l)
    for (std::int64_t k = 0; k < m; ++k) d.values(l, k) = coin(rng) ? 1.0 : -1.0;
  return d;
}

SimRecord bits_only(int n, const std::vector<std::int8_t>& bits) {
  SimRecord r;
  r.n_stages = n;
  r.n_cycles = static_cast<std::int64_t>(bits.size()) / n;
  r.bits = bits;
  return r;
}
}  // namespace

TEST_CASE("unit decimation is the identity", "[recon]") {
  const std::vector<double> x = {0.5, -1.0, 2.0, 3.5};
  for (auto pf : {Prefilter::None, Prefilter::Boxcar})
    CHECK(decimate(x, DecimationSpec{1, pf}) == x);
  const auto lp = decimate(x, DecimationSpec{1, Prefilter::Lowpass, 1, 1.0});
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(lp[i] == Approx(x[i]).epsilon(1e-15));
}

TEST_CASE("decimating constant and alternating controls", "[recon]") {
  const std::vector<std::int8_t> ones(2 * 100, 1);
  const auto d = decimate_controls(bits_only(2, ones), 5, true);
  CHECK(d.length() == 20);
  CHECK((d.values.array() == 1.0).all());

  std::vector<std::int8_t> alt(100);
  for (std::size_t i = 0; i < alt.size(); ++i) alt[i] = i % 2 ? -1 : 1;
  const auto a = decimate_controls(bits_only(1, alt), 4, true);
  CHECK((a.values.array() == 0.0).all());
  const auto b = decimate_controls(bits_only(1, alt), 4, false);
  CHECK((b.values.array() == 1.0).all());
  const auto t = decimate_controls(bits_only(1, alt), 7, true);
  CHECK(t.length() == 14);
  CHECK(t.trimmed == 2);
}

TEST_CASE("lowpass prefilter", "[recon]") {
  const auto h = lowpass_taps(13, 8, 0.75);
  REQUIRE(h.size() == 104);
  double sum = 0.0;
  for (double v : h) sum += v;
  CHECK(sum == Approx(1.0).epsilon(1e-14));
  for (std::size_t i = 0; i < h.size(); ++i) CHECK(h[i] == Approx(h[h.size() - 1 - i]).margin(1e-16));

  // a tone well above the output Nyquist frequency is suppressed
  std::vector<double> x(13 * 200);
  for (std::size_t k = 0; k < x.size(); ++k) x[k] = std::cos(std::numbers::pi * 0.4 * static_cast<double>(k));
  const auto y = decimate(x, DecimationSpec{13, Prefilter::Lowpass});
  for (std::size_t k = 10; k < y.size(); ++k) CHECK(std::abs(y[k]) < 1e-3);
  CHECK(prefilter_from_string(to_string(Prefilter::Lowpass)) == Prefilter::Lowpass);
  CHECK_THROWS_AS(prefilter_from_string("median"), DomainError);
}

TEST_CASE("estimate is linear in the taps", "[recon]") {
  const auto dec = random_controls(3, 500, 1);
  auto a = zero_bank(3, 8, DecimationSpec{}, 1.0);
  for (double v : estimate(dec, a)) CHECK(v == 0.0);

  auto id = a;
  id.tap(1, 0) = 1.0;
  const auto e = estimate(dec, id);
  for (Eigen::Index k = 0; k < dec.length(); ++k) CHECK(e[k] == dec.values(1, k));

  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  auto b = a;
  for (auto& v : a.taps) v = g(rng);
  for (auto& v : b.taps) v = g(rng);
  const auto ea = estimate(dec, a), eb = estimate(dec, b), eab = estimate(dec, a + b);
  for (std::size_t k = 0; k < eab.size(); ++k) CHECK(std::abs(eab[k] - ea[k] - eb[k]) <= 1e-12);
}

TEST_CASE("zero reference trains zero taps", "[recon]") {
  const auto dec = random_controls(2, 2000, 3);
  const std::vector<double> ref(2000, 0.0);
  TrainOptions opt;
  const auto [bank, rep] = train_filters(dec, ref, opt);
  for (double v : bank.taps) CHECK(v == 0.0);
  CHECK(rep.residual_mse == 0.0);
}

TEST_CASE("planted filter bank is recovered", "[recon]") {
  const int n = 4, taps = 32, latency = 16;
  const std::int64_t m = 6000;
  const auto dec = random_controls(n, m, 4);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  auto planted = zero_bank(n, taps, DecimationSpec{}, 1.0);
  for (auto& v : planted.taps) v = g(rng);
  const auto y = estimate(dec, planted);
  std::vector<double> ref(static_cast<std::size_t>(m - latency));
  for (std::size_t i = 0; i < ref.size(); ++i) ref[i] = y[i + latency];

  TrainOptions opt;
  opt.ridge = 1e-12;
  const auto [bank, rep] = train_filters(dec, ref, opt);
  double err = 0.0;
  for (std::size_t i = 0; i < bank.taps.size(); ++i) err = std::max(err, std::abs(bank.taps[i] - planted.taps[i]));
  CHECK(err <= 1e-8);
  CHECK(rep.latency == latency);

  // the least-squares solution cannot be improved by small perturbations
  opt.ridge = 0.0;
  const auto [exact, rep0] = train_filters(dec, ref, opt);
  const double base = training_residual(dec, ref, exact);
  for (int trial = 0; trial < 20; ++trial) {
    auto q = exact;
    for (auto& v : q.taps) v += 1e-6 * g(rng);
    CHECK(training_residual(dec, ref, q) >= base);
  }
}

TEST_CASE("rank-deficient training needs regularization", "[recon]") {
  auto dec = random_controls(2, 3000, 6);
  dec.values.row(1) = dec.values.row(0);
  std::vector<double> ref(3000, 0.5);
  TrainOptions opt;
  opt.taps = 8;
  opt.latency = 4;
  opt.ridge = 0.0;
  CHECK_THROWS_AS(train_filters(dec, ref, opt), NumericalError);
  opt.ridge = 1e-6;
  CHECK_NOTHROW(train_filters(dec, ref, opt));
}

TEST_CASE("training rejects short records and bad options", "[recon]") {
  const auto dec = random_controls(4, 300, 7);
  const std::vector<double> ref(300, 0.0);
  CHECK_THROWS_AS(train_filters(dec, ref, TrainOptions{}), DomainError);
  TrainOptions bad;
  bad.latency = 32;
  CHECK_THROWS_AS(train_filters(dec, ref, bad), DomainError);
}

TEST_CASE("LMS settles near the least-squares residual", "[recon]") {
  const auto p = build_nominal_config(4, 26, std::pow(1e-3, 0.25), kOmegaB, 1.0);
  const auto in = training_input(p, 42);
  const auto n_cycles = record_cycles(p, 1.0);
  const auto rec = simulate(nominal_elements(p, 1e4), p, {}, in, n_cycles, SimOptions{});
  TrainOptions opt;
  opt.decimation = default_decimation(p);
  const auto dec = decimate_controls(rec, opt.decimation);
  const auto ref = training_reference(in, n_cycles, opt.decimation);
  const auto ls = train_filters(dec, ref, opt);
  const auto lms = train_filters_lms(dec, ref, opt, LmsOptions{});
  CHECK(lms.second.residual_mse <= 1.01 * ls.second.residual_mse);
  CHECK(lms.second.residual_mse >= ls.second.residual_mse * (1.0 - 1e-9));
}

TEST_CASE("filter bank JSON round trip", "[recon]") {
  auto b = zero_bank(3, 4, DecimationSpec{13, Prefilter::Lowpass, 6, 0.6}, 4e7);
  for (std::size_t i = 0; i < b.taps.size(); ++i) b.taps[i] = 0.1 * static_cast<double>(i) - 0.3;
  b.latency = 2;
  const nlohmann::json j = b;
  const auto c = j.get<FilterBank>();
  CHECK(c.taps == b.taps);
  CHECK(c.n_taps == 4);
  CHECK(c.decimation.factor == 13);
  CHECK(c.decimation.prefilter == Prefilter::Lowpass);
  CHECK(c.decimation.span == 6);
  CHECK(c.decimation.cutoff == 0.6);
  CHECK(c.latency == 2);
  CHECK(c.nyquist_rate == 4e7);

  auto legacy = j;
  legacy.erase("prefilter");
  legacy["pre_average"] = false;
  CHECK(legacy.get<FilterBank>().decimation.prefilter == Prefilter::None);
  legacy["taps"].erase(0);
  CHECK_THROWS_AS(legacy.get<FilterBank>(), DomainError);
}
