#pragma once
// Spectral and statistical evaluation of reconstructed outputs and state
// trajectories.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <mutex>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rcchain/chain_model.hpp"
#include "rcchain/designer.hpp"
#include "rcchain/error.hpp"
#include "rcchain/sim_engine.hpp"

namespace rcchain {

inline constexpr int kWelchSegments = 8;
inline constexpr double kWelchOverlap = 0.5;

struct PsdEstimate {
  std::vector<double> freqs;  // Hz
  std::vector<double> power;  // V^2/Hz, single-sided
  std::string window = "hann";
  int segment_len = 0;
  double overlap = 0.0;
  int segments = 0;
  double full_scale = 1.0;  // amplitude of the 0 dBFS sine
  double sample_rate = 1.0;

  double bin_width() const { return sample_rate / segment_len; }
  /// Bin power relative to a full-scale sine, A^2/2.
  double dbfs(std::size_t i) const {
    return 10.0 * std::log10(power[i] * bin_width() / (0.5 * full_scale * full_scale));
  }
};

/// Segment length giving `segments` windows at the given overlap, rounded down to a
/// multiple of 8 so that tones at rational fractions of the rate land on bins.
inline int welch_segment_length(std::size_t n_samples, int segments = kWelchSegments,
                                double overlap = kWelchOverlap) {
  const double len = static_cast<double>(n_samples) / (1.0 + (segments - 1) * (1.0 - overlap));
  return std::max(8, static_cast<int>(len) / 8 * 8);
}

namespace detail {
inline std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

/// Averaged Hann-windowed periodogram. Mean is not removed.
inline PsdEstimate welch_psd(std::span<const double> samples, double sample_rate, int segment_len,
                             double overlap = kWelchOverlap, double full_scale = 1.0) {
  detail::require(segment_len >= 2, "welch_psd: segment_len must be >= 2");
  detail::require(static_cast<std::size_t>(segment_len) <= samples.size(),
                  "welch_psd: segment longer than record");
  detail::require(overlap >= 0.0 && overlap < 1.0, "welch_psd: overlap must lie in [0,1)");
  detail::require(sample_rate > 0.0, "welch_psd: sample_rate must be positive");
  const int len = segment_len;
  const int hop = std::max(1, static_cast<int>(std::lround(len * (1.0 - overlap))));
  const int n_bins = len / 2 + 1;

  std::vector<double> window(static_cast<std::size_t>(len));
  double w_sq = 0.0;
  for (int i = 0; i < len; ++i) {
    // periodic Hann: a tone on a bin centre leaks into exactly the two neighbours
    window[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / len);
    w_sq += window[static_cast<std::size_t>(i)] * window[static_cast<std::size_t>(i)];
  }

  std::vector<double> in(static_cast<std::size_t>(len));
  std::vector<fftw_complex> out(static_cast<std::size_t>(n_bins));
  fftw_plan plan;
  {
    std::lock_guard lock(detail::fftw_plan_mutex());
    plan = fftw_plan_dft_r2c_1d(len, in.data(), out.data(), FFTW_ESTIMATE);
  }

  PsdEstimate psd;
  psd.segment_len = len;
  psd.overlap = overlap;
  psd.full_scale = full_scale;
  psd.sample_rate = sample_rate;
  psd.power.assign(static_cast<std::size_t>(n_bins), 0.0);
  psd.freqs.resize(static_cast<std::size_t>(n_bins));
  for (int b = 0; b < n_bins; ++b) psd.freqs[static_cast<std::size_t>(b)] = b * sample_rate / len;

  for (std::size_t start = 0; start + static_cast<std::size_t>(len) <= samples.size();
       start += static_cast<std::size_t>(hop)) {
    for (int i = 0; i < len; ++i)
      in[static_cast<std::size_t>(i)] = samples[start + static_cast<std::size_t>(i)] * window[static_cast<std::size_t>(i)];
    fftw_execute(plan);
    for (int b = 0; b < n_bins; ++b) {
      const auto& c = out[static_cast<std::size_t>(b)];
      psd.power[static_cast<std::size_t>(b)] += c[0] * c[0] + c[1] * c[1];
    }
    ++psd.segments;
  }
  {
    std::lock_guard lock(detail::fftw_plan_mutex());
    fftw_destroy_plan(plan);
  }

  const double scale = 1.0 / (sample_rate * w_sq * psd.segments);
  for (int b = 0; b < n_bins; ++b) {
    const bool edge = b == 0 || (len % 2 == 0 && b == n_bins - 1);
    psd.power[static_cast<std::size_t>(b)] *= scale * (edge ? 1.0 : 2.0);
  }
  return psd;
}

/// Welch estimate with the default segmentation (8 segments, 50% overlap).
inline PsdEstimate welch_psd(std::span<const double> samples, double sample_rate, double full_scale = 1.0) {
  return welch_psd(samples, sample_rate, welch_segment_length(samples.size()), kWelchOverlap, full_scale);
}

struct SnrResult {
  double snr_db = 0.0;
  double enob = 0.0;
  double signal_power = 0.0;  // V^2
  double noise_power = 0.0;   // V^2
  std::size_t signal_bin = 0;
};

/// Signal power is summed over the Hann main lobe (bin +-1) plus guard_bins on
/// each side; noise is every other in-band bin except DC.
inline SnrResult snr_enob(const PsdEstimate& psd, double signal_freq, double band_hz,
                          int guard_bins = 2) {
  detail::require(guard_bins >= 0, "snr_enob: guard_bins must be >= 0");
  detail::require(signal_freq > 0.0 && signal_freq <= band_hz, "snr_enob: signal outside band");
  const double df = psd.bin_width();
  const auto last = std::min(psd.power.size() - 1, static_cast<std::size_t>(std::floor(band_hz / df + 1e-9)));
  const auto bin = static_cast<std::size_t>(std::lround(signal_freq / df));
  const std::size_t half = 1 + static_cast<std::size_t>(guard_bins);
  if (bin <= half || bin + half > last) throw DomainError("snr_enob: signal bin too close to band edge");

  SnrResult r;
  r.signal_bin = bin;
  for (std::size_t b = 1; b <= last; ++b) {
    const double p = psd.power[b] * df;
    if (b + half >= bin && b <= bin + half)
      r.signal_power += p;
    else
      r.noise_power += p;
  }
  r.snr_db = 10.0 * std::log10(r.signal_power / r.noise_power);
  r.enob = snr_to_enob(r.snr_db);
  return r;
}

struct Histogram {
  std::vector<double> bin_centers;
  std::vector<std::int64_t> counts;
};

/// Histogram of v_x_l at the clock edges after warm-up. With `normalize`
/// the values are divided by delta^l * v_max and binned over [-1, 1].
inline Histogram state_histogram(const SimRecord& rec, int stage, int n_bins, bool normalize = true,
                                 bool skip_warmup = true) {
  if (!rec.has_states()) throw DomainError("state_histogram: record has no state samples");
  detail::require(stage >= 1 && stage <= rec.n_stages, "state_histogram: stage out of range");
  detail::require(n_bins >= 1, "state_histogram: n_bins must be >= 1");
  const std::int64_t k0 = skip_warmup ? rec.warmup_cycles : 0;
  double scale = 1.0;
  if (normalize) {
    const auto p = rec.config.at("params").get<ChainParameters>();
    scale = std::pow(p.delta, stage) * p.v_max;
  }
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(rec.n_cycles - k0));
  for (std::int64_t k = k0; k < rec.n_cycles; ++k) v.push_back(rec.state(k, stage - 1) / scale);

  double lo = -1.0, hi = 1.0;
  if (!normalize) {
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    lo = v.empty() ? 0.0 : *mn;
    hi = v.empty() ? 0.0 : *mx;
  }
  if (normalize && !v.empty()) {
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    lo = std::min(lo, *mn);
    hi = std::max(hi, *mx);
  }
  double width = (hi - lo) / n_bins;
  if (!(width > 0.0)) {
    // degenerate data: first bin centred on the value
    width = std::max(std::abs(lo) * 1e-3, 1e-12);
    lo -= 0.5 * width;
  }
  Histogram h;
  h.counts.assign(static_cast<std::size_t>(n_bins), 0);
  for (int b = 0; b < n_bins; ++b) h.bin_centers.push_back(lo + (b + 0.5) * width);
  for (double x : v) {
    const auto b = std::clamp(static_cast<int>(std::floor((x - lo) / width)), 0, n_bins - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

struct InputCurrentStats {
  double nominal_current_rms = 0.0;  // A, v_u / R at the clock edges
  double excess_current_max = 0.0;   // A, max |v_x1| / R over all substeps
  double excess_bound = 0.0;         // A, delta * v_max / R
  bool within_bound = true;
};

inline InputCurrentStats input_current_stats(const SimRecord& rec, const ElementValues& elements,
                                             const InputSignal& in) {
  detail::require(!rec.max_abs_state.empty(), "input_current_stats: record has no state data");
  const auto p = rec.config.at("params").get<ChainParameters>();
  const double r = elements.chain_r.at(0);
  const int substeps = std::max(1, rec.substeps_per_cycle);
  const detail::InputSampler sampler(in, p.f_s, substeps, rec.n_cycles);
  double acc = 0.0;
  std::int64_t count = 0;
  for (std::int64_t k = rec.warmup_cycles; k < rec.n_cycles; ++k, ++count) {
    const double u = sampler.at(k, 0, static_cast<double>(k) / p.f_s);
    acc += u * u;
  }
  InputCurrentStats s;
  s.nominal_current_rms = count > 0 ? std::sqrt(acc / static_cast<double>(count)) / r : 0.0;
  s.excess_current_max = rec.max_abs_state[0] / r;
  s.excess_bound = p.delta * p.v_max / r;
  s.within_bound = s.excess_current_max <= s.excess_bound;
  return s;
}

inline void write_psd_csv(std::ostream& os, const PsdEstimate& psd) {
  os << "freq_hz,psd_dbfs\n";
  for (std::size_t i = 0; i < psd.power.size(); ++i) os << psd.freqs[i] << ',' << psd.dbfs(i) << '\n';
}

inline void write_histogram_csv(std::ostream& os, const Histogram& h) {
  os << "bin_center,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) os << h.bin_centers[i] << ',' << h.counts[i] << '\n';
}

}  // namespace rcchain
