#pragma once
// End-to-end experiment protocols: train/test run pairs, expected-vs-
// simulated surface validation, Monte Carlo robustness and loop-delay
// sweeps. Independent runs fan out over a worker pool; results are
// collected by index so the output never depends on scheduling.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <tuple>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "rcchain/chain_model.hpp"
#include "rcchain/designer.hpp"
#include "rcchain/metrics.hpp"
#include "rcchain/recon.hpp"
#include "rcchain/rng.hpp"
#include "rcchain/sim_engine.hpp"

namespace rcchain {

inline constexpr std::int64_t kRecordNyquistPeriods = 4096;  // 2^12

/// Runs fn(i) for i in [0, count) on up to `jobs` threads; results by index.
template <class T, class Fn>
std::vector<T> parallel_map(std::size_t count, int jobs, Fn&& fn) {
  std::vector<std::optional<T>> slots(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto n_threads = static_cast<std::size_t>(std::max(1, jobs));
  if (n_threads == 1 || count <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(n_threads, count); ++t) pool.emplace_back(worker);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<T> out;
  out.reserve(count);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

struct RunPairOptions {
  int substeps = kDefaultSubsteps;
  double cycles_scale = 1.0;  // record length = scale * 2^12 * OSR cycles
  TrainOptions train{};       // decimation and nyquist_rate are filled in per run
  std::optional<DecimationSpec> decimation;  // default_decimation(p) when empty
  NoiseSpec noise{};
  bool keep_records = false;
  int guard_bins = 2;
};

struct RunPairResult {
  FilterBank bank;
  TrainingReport report;
  SnrResult snr;
  PsdEstimate psd;
  std::vector<double> u_hat;  // post-warm-up decimated estimate of the test run
  double test_omega = 0.0;
  double rms_last_state = 0.0;        // RMS(v_x_N) / v_max over post-warm-up edges
  std::vector<double> swing_ratio;    // max |v_x_l| / (delta^l v_max) over every substep
  std::vector<double> training_swing_ratio;
  std::optional<SimRecord> training;
  std::optional<SimRecord> test;
};

inline std::int64_t record_cycles(const ChainParameters& p, double scale) {
  return std::max<std::int64_t>(
      1, static_cast<std::int64_t>(std::llround(scale * static_cast<double>(kRecordNyquistPeriods))) * p.osr);
}

inline input::HeldRandom training_input(const ChainParameters& p, std::uint64_t seed) {
  return input::HeldRandom{p.v_max, p.osr, derive_seed(seed, 1)};
}

/// Default reconstruction grid: two output samples per Nyquist period.
inline DecimationSpec default_decimation(const ChainParameters& p) {
  DecimationSpec d;
  d.factor = std::max(1, p.osr / 2);
  d.prefilter = Prefilter::Lowpass;
  return d;
}

/// Full-scale test sine near omega_B / 2, moved onto the nearest Welch bin
/// that is coprime with the segment length. A tone at a rational fraction of
/// f_s with a short period would lock the loop into a periodic orbit.
inline input::Sine test_input(const ChainParameters& p, std::int64_t n_cycles, int decimation) {
  const std::int64_t warm = (static_cast<std::int64_t>(kWarmupNyquistPeriods) * p.osr + decimation - 1) / decimation;
  const std::int64_t m = n_cycles / decimation - warm;
  const double out_rate = p.f_s / decimation;
  const double target = 0.25 * p.omega_b / std::numbers::pi;
  if (m < 8) return input::Sine{p.v_max, 2.0 * std::numbers::pi * target, 0.0};
  const int seg = welch_segment_length(static_cast<std::size_t>(m));
  const auto b0 = static_cast<int>(std::lround(target * seg / out_rate));
  int bin = b0;
  for (int off = 0; off < seg / 2; ++off) {
    if (b0 - off > 0 && std::gcd(b0 - off, seg) == 1) { bin = b0 - off; break; }
    if (std::gcd(b0 + off, seg) == 1) { bin = b0 + off; break; }
  }
  return input::Sine{p.v_max, 2.0 * std::numbers::pi * bin * out_rate / seg, 0.0};
}

/// Training reference: the held input per cycle, decimated with the same
/// prefilter as the control sequences.
inline std::vector<double> training_reference(const input::HeldRandom& in, std::int64_t n_cycles,
                                              const DecimationSpec& decimation) {
  const auto levels = held_levels(in, (n_cycles + in.hold_cycles - 1) / in.hold_cycles);
  std::vector<double> per_cycle(static_cast<std::size_t>(n_cycles));
  for (std::int64_t k = 0; k < n_cycles; ++k)
    per_cycle[static_cast<std::size_t>(k)] = levels[static_cast<std::size_t>(k / in.hold_cycles)];
  return decimate(per_cycle, decimation);
}

inline std::vector<double> swing_ratios(const SimRecord& rec, const ChainParameters& p) {
  std::vector<double> out;
  for (int l = 0; l < rec.n_stages; ++l)
    out.push_back(rec.max_abs_state[static_cast<std::size_t>(l)] / (std::pow(p.delta, l + 1) * p.v_max));
  return out;
}

/// Train on a held-random record, then measure SNR over [0, f_B] of the
/// reconstruction of a full-scale sine near omega_B / 2.
inline RunPairResult run_pair(const ChainParameters& p, const ElementValues& elements,
                              const ComparatorModel& comp, std::uint64_t seed,
                              const RunPairOptions& opt = {}) {
  const std::int64_t n_cycles = record_cycles(p, opt.cycles_scale);
  TrainOptions topt = opt.train;
  topt.decimation = opt.decimation.value_or(default_decimation(p));
  topt.nyquist_rate = p.f_s / topt.decimation.factor;

  SimOptions sopt;
  sopt.substeps = opt.substeps;
  sopt.noise = opt.noise;

  const auto train_in = training_input(p, seed);
  sopt.seed = derive_seed(seed, 2);
  auto training = simulate(elements, p, comp, InputSignal{train_in}, n_cycles, sopt);
  const auto reference = training_reference(train_in, n_cycles, topt.decimation);

  RunPairResult r;
  std::tie(r.bank, r.report) = train_filters(training, reference, topt);
  r.training_swing_ratio = swing_ratios(training, p);

  sopt.seed = derive_seed(seed, 3);
  const auto tone = test_input(p, n_cycles, topt.decimation.factor);
  r.test_omega = tone.omega;
  auto test = simulate(elements, p, comp, InputSignal{tone}, n_cycles, sopt);
  const auto dec = decimate_controls(test, r.bank.decimation);
  const auto full = estimate(dec, r.bank);
  r.u_hat.assign(full.begin() + dec.warmup, full.end());
  r.psd = welch_psd(r.u_hat, topt.nyquist_rate, p.v_max);
  const double f_b = p.omega_b / (2.0 * std::numbers::pi);
  r.snr = snr_enob(r.psd, tone.omega / (2.0 * std::numbers::pi), f_b, opt.guard_bins);

  double acc = 0.0;
  for (std::int64_t k = test.warmup_cycles; k < test.n_cycles; ++k) {
    const double v = test.state(k, p.n_stages - 1) / p.v_max;
    acc += v * v;
  }
  r.rms_last_state = std::sqrt(acc / static_cast<double>(test.n_cycles - test.warmup_cycles));
  r.swing_ratio = swing_ratios(test, p);
  if (opt.keep_records) {
    r.training = std::move(training);
    r.test = std::move(test);
  }
  return r;
}

struct SurfaceCell {
  int n_stages = 0;
  int osr = 0;
  double expected_db = 0.0;
  double simulated_db = std::numeric_limits<double>::quiet_NaN();
  std::string error;  // non-empty when the cell failed

  double gap() const { return simulated_db - expected_db; }
};

inline std::vector<SurfaceCell> validate_surface(const DesignTarget& target, std::span<const int> n_values,
                                                 std::span<const int> osr_values, std::uint64_t seed,
                                                 const RunPairOptions& opt, int jobs, double r_value = 1e4) {
  std::vector<std::pair<int, int>> cells;
  for (int n : n_values)
    for (int o : osr_values) cells.emplace_back(n, o);
  return parallel_map<SurfaceCell>(cells.size(), jobs, [&](std::size_t i) {
    SurfaceCell c;
    c.n_stages = cells[i].first;
    c.osr = cells[i].second;
    try {
      const auto p = cell_parameters(target, c.n_stages, c.osr);
      c.expected_db = expected_snr(p);
      c.simulated_db =
          run_pair(p, nominal_elements(p, r_value), ComparatorModel{}, derive_seed(seed, i), opt).snr.snr_db;
    } catch (const std::exception& e) {
      c.error = e.what();
    }
    return c;
  });
}

enum class MonteCarloMode { Rc, Offset };

struct TrialResult {
  std::size_t index = 0;
  double enob = std::numeric_limits<double>::quiet_NaN();
  double snr_db = std::numeric_limits<double>::quiet_NaN();
  bool diverged = false;
  std::string error;
};

struct MonteCarloOptions {
  MonteCarloMode mode = MonteCarloMode::Rc;
  int trials = 200;
  double fraction = 0.2;
  PerturbMode perturb = PerturbMode::PerElement;
};

/// Per trial: perturb elements (Rc) or draw comparator offsets (Offset), then
/// run a full train/test pair with freshly trained filters.
inline std::vector<TrialResult> monte_carlo(const ChainParameters& p, const ElementValues& nominal,
                                            const MonteCarloOptions& mc, std::uint64_t master_seed,
                                            const RunPairOptions& opt, int jobs) {
  detail::require(mc.trials >= 1, "monte_carlo: trials must be >= 1");
  return parallel_map<TrialResult>(static_cast<std::size_t>(mc.trials), jobs, [&](std::size_t i) {
    TrialResult t;
    t.index = i;
    const std::uint64_t trial_seed = derive_seed(master_seed, i);
    ElementValues elements = nominal;
    ComparatorModel comp;
    if (mc.mode == MonteCarloMode::Rc)
      elements = perturb_elements(nominal, mc.fraction, mc.perturb, derive_seed(trial_seed, 10));
    else
      comp.offsets = random_offsets(p.n_stages, mc.fraction, p.v_max, derive_seed(trial_seed, 11));
    try {
      const auto r = run_pair(p, elements, comp, trial_seed, opt);
      t.snr_db = r.snr.snr_db;
      t.enob = r.snr.enob;
    } catch (const DivergedError& e) {
      t.diverged = true;
      t.error = e.what();
    } catch (const std::exception& e) {
      t.error = e.what();
    }
    return t;
  });
}

struct DelayPoint {
  double delay_norm = 0.0;  // delay * f_s, after rounding to the substep grid
  double enob = 0.0;
  double snr_db = 0.0;
};

/// ENOB over n_points delays spread evenly on [0, 1/f_s], snapped to the substep grid.
inline std::vector<DelayPoint> delay_sweep(const ChainParameters& p, const ElementValues& elements,
                                           int n_points, std::uint64_t seed, const RunPairOptions& opt,
                                           int jobs) {
  detail::require(n_points >= 1, "delay_sweep: n_points must be >= 1");
  return parallel_map<DelayPoint>(static_cast<std::size_t>(n_points), jobs, [&](std::size_t i) {
    const double frac = n_points == 1 ? 0.0 : static_cast<double>(i) / (n_points - 1);
    const int sub = static_cast<int>(std::lround(frac * opt.substeps));
    ComparatorModel comp;
    comp.delay = static_cast<double>(sub) / opt.substeps / p.f_s;
    const auto r = run_pair(p, elements, comp, seed, opt);
    return DelayPoint{static_cast<double>(sub) / opt.substeps, r.snr.enob, r.snr.snr_db};
  });
}

}  // namespace rcchain
