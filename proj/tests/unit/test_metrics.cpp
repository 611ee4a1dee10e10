#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "rcchain/metrics.hpp"

using namespace rcchain;
using Catch::Approx;

namespace {
double integrate(const PsdEstimate& psd) {
  double s = 0.0;
  for (double v : psd.power) s += v * psd.bin_width();
  return s;
}

std::vector<double> tone(std::size_t n, double amp, double cycles_per_sample, double phase = 0.2) {
  std::vector<double> x(n);
  for (std::size_t k = 0; k < n; ++k)
    x[k] = amp * std::sin(2.0 * std::numbers::pi * cycles_per_sample * static_cast<double>(k) + phase);
  return x;
}
}  // namespace

TEST_CASE("white noise PSD integrates to its variance", "[metrics]") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  std::vector<double> x(1 << 16);
  for (auto& v : x) v = g(rng);
  const auto psd = welch_psd(x, 2.0);
  CHECK(integrate(psd) == Approx(1.0).epsilon(0.05));
  CHECK(psd.segments == 8);
  CHECK(psd.freqs.back() == Approx(1.0));
}

TEST_CASE("sine PSD integrates to A^2/2", "[metrics]") {
  const auto x = tone(1 << 14, 0.7, 0.1);
  const auto psd = welch_psd(x, 1.0, 2048, 0.5, 1.0);
  CHECK(integrate(psd) == Approx(0.5 * 0.49).epsilon(0.01));
  // an on-bin tone at full scale reads about 0 dBFS summed over its main lobe
  const auto bin = static_cast<std::size_t>(std::lround(0.1 * 2048));
  const double lobe = (psd.power[bin - 1] + psd.power[bin] + psd.power[bin + 1]) * psd.bin_width();
  CHECK(lobe == Approx(0.5 * 0.49).epsilon(0.01));
}

TEST_CASE("zero input has zero PSD", "[metrics]") {
  const std::vector<double> x(4096, 0.0);
  for (double v : welch_psd(x, 1.0).power) CHECK(v == 0.0);
}

TEST_CASE("SNR of a sine in white noise", "[metrics]") {
  const std::size_t n = 1 << 16;
  const int seg = welch_segment_length(n);
  const double f = 301.0 / seg;
  auto x = tone(n, 1.0, f);
  std::mt19937_64 rng(3);
  const double sigma = 1e-3;
  std::normal_distribution<double> g(0.0, sigma);
  for (auto& v : x) v += g(rng);
  const auto psd = welch_psd(x, 1.0);
  // whole Nyquist band
  const double expected = 10.0 * std::log10(0.5 / (sigma * sigma));
  const auto r = snr_enob(psd, f, 0.5);
  CHECK(r.snr_db == Approx(expected).margin(0.5));
  CHECK(r.enob == Approx((r.snr_db - 1.76) / 6.02));
  CHECK(std::abs(snr_enob(psd, f, 0.5, 0).snr_db - r.snr_db) < 0.2);
  // quarter band holds a quarter of the noise
  CHECK(snr_enob(psd, f, 0.125).snr_db == Approx(expected + 10.0 * std::log10(4.0)).margin(0.5));
}

TEST_CASE("SNR is invariant to scaling", "[metrics]") {
  const std::size_t n = 1 << 14;
  auto x = tone(n, 1.0, 0.0731);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 1e-2);
  for (auto& v : x) v += g(rng);
  auto y = x;
  for (auto& v : y) v *= 3.5;
  const auto a = snr_enob(welch_psd(x, 1.0), 0.0731, 0.5);
  const auto b = snr_enob(welch_psd(y, 1.0, 3.5), 0.0731, 0.5);
  CHECK(a.snr_db == Approx(b.snr_db).epsilon(1e-12));
}

TEST_CASE("signal at the band edge is rejected", "[metrics]") {
  const auto psd = welch_psd(tone(4096, 1.0, 0.01), 1.0);
  CHECK_THROWS_AS(snr_enob(psd, 0.6, 0.5), DomainError);
  CHECK_THROWS_AS(snr_enob(psd, 0.5 / psd.segment_len, 0.5), DomainError);
  CHECK_THROWS_AS(snr_enob(psd, 0.499, 0.5), DomainError);
}

TEST_CASE("state histogram", "[metrics]") {
  SimRecord rec;
  rec.n_stages = 2;
  rec.n_cycles = 1000;
  rec.warmup_cycles = 100;
  rec.config["params"] = build_nominal_config(2, 10, 0.1, 1e6, 1.0);
  for (std::int64_t k = 0; k < rec.n_cycles; ++k) {
    rec.state_samples.push_back(0.055);
    rec.state_samples.push_back(0.004 * std::sin(0.1 * static_cast<double>(k)));
  }
  const auto h = state_histogram(rec, 1, 20);
  std::int64_t total = 0;
  for (auto c : h.counts) total += c;
  CHECK(total == 900);
  CHECK(h.counts[15] == 900);

  const auto h2 = state_histogram(rec, 2, 16, true, false);
  total = 0;
  for (auto c : h2.counts) total += c;
  CHECK(total == 1000);
  const auto raw = state_histogram(rec, 1, 5, false);
  CHECK(raw.counts[0] == 900);
  CHECK(raw.bin_centers[0] == Approx(0.055));
  CHECK_THROWS_AS(state_histogram(rec, 3, 10), DomainError);

  std::ostringstream os;
  write_histogram_csv(os, h);
  CHECK(os.str().rfind("bin_center,count\n", 0) == 0);
}

TEST_CASE("input current statistics", "[metrics]") {
  const auto p = build_nominal_config(3, 12, 0.1, 2.0 * std::numbers::pi * 1e6, 1.0);
  const auto e = nominal_elements(p, 1e4);
  const auto zero = simulate(e, p, {}, input::Zero{}, 2000, SimOptions{});
  const auto s0 = input_current_stats(zero, e, input::Zero{});
  CHECK(s0.nominal_current_rms == 0.0);
  CHECK(s0.within_bound);
  CHECK(s0.excess_bound == Approx(0.1 / 1e4));

  input::External dc{std::vector<double>(2000 * kDefaultSubsteps, p.v_max)};
  const auto full = simulate(e, p, {}, dc, 2000, SimOptions{});
  const auto s1 = input_current_stats(full, e, dc);
  CHECK(s1.nominal_current_rms == Approx(p.v_max / 1e4).epsilon(1e-12));
  CHECK(s1.excess_current_max == Approx(full.max_abs_state[0] / 1e4));
}

TEST_CASE("PSD CSV layout", "[metrics]") {
  const auto psd = welch_psd(tone(256, 1.0, 0.125), 8.0, 64, 0.5, 1.0);
  std::ostringstream os;
  write_psd_csv(os, psd);
  std::istringstream is(os.str());
  std::string line;
  int rows = -1;
  while (std::getline(is, line)) ++rows;
  CHECK(os.str().rfind("freq_hz,psd_dbfs\n", 0) == 0);
  CHECK(rows == 33);
}
