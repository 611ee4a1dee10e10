#pragma once
// Digital reconstruction: u_hat[k] = sum_l (h_l * s_l)[k] on a decimated
// grid, with the control sequences prefiltered and decimated by D and the
// per-channel FIR filters fitted to a known training input.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rcchain/error.hpp"
#include "rcchain/sim_engine.hpp"

namespace rcchain {

inline constexpr int kDefaultTaps = 32;
inline constexpr int kDefaultLatency = 16;
inline constexpr double kDefaultRidge = 1e-6;

enum class Prefilter { None, Boxcar, Lowpass };

struct DecimationSpec {
  int factor = 1;
  Prefilter prefilter = Prefilter::Boxcar;
  int span = 8;          // lowpass length in output periods
  double cutoff = 0.75;  // lowpass cutoff as a fraction of the output Nyquist frequency
};

/// Blackman-windowed sinc, span * factor taps, unity DC gain.
inline std::vector<double> lowpass_taps(int factor, int span, double cutoff) {
  detail::require(factor >= 1 && span >= 1, "lowpass_taps: factor and span must be >= 1");
  detail::require(cutoff > 0.0 && cutoff <= 1.0, "lowpass_taps: cutoff must lie in (0,1]");
  const int len = span * factor;
  std::vector<double> h(static_cast<std::size_t>(len));
  double sum = 0.0;
  for (int i = 0; i < len; ++i) {
    const double x = (i - 0.5 * (len - 1)) * cutoff / factor;
    const double sinc = std::abs(x) < 1e-12 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
    const double ph = 2.0 * std::numbers::pi * (i + 0.5) / len;
    h[static_cast<std::size_t>(i)] = sinc * (0.42 - 0.5 * std::cos(ph) + 0.08 * std::cos(2.0 * ph));
    sum += h[static_cast<std::size_t>(i)];
  }
  for (auto& v : h) v /= sum;
  return h;
}

/// Decimates a per-cycle sequence. Output k covers cycles up to (k+1)D - 1:
/// the block mean (Boxcar), the causal lowpass output at the block end
/// (Lowpass), or the first sample of the block (None).
inline std::vector<double> decimate(std::span<const double> x, const DecimationSpec& spec) {
  const int d = spec.factor;
  detail::require(d >= 1, "decimate: factor must be >= 1");
  const auto m = static_cast<std::int64_t>(x.size()) / d;
  std::vector<double> out(static_cast<std::size_t>(m));
  std::vector<double> h;
  if (spec.prefilter == Prefilter::Lowpass) h = lowpass_taps(d, spec.span, spec.cutoff);
  for (std::int64_t k = 0; k < m; ++k) {
    double acc = 0.0;
    switch (spec.prefilter) {
      case Prefilter::None:
        acc = x[static_cast<std::size_t>(k * d)];
        break;
      case Prefilter::Boxcar:
        for (int i = 0; i < d; ++i) acc += x[static_cast<std::size_t>(k * d + i)];
        acc /= d;
        break;
      case Prefilter::Lowpass: {
        const std::int64_t end = (k + 1) * d - 1;
        for (std::int64_t j = 0; j < static_cast<std::int64_t>(h.size()) && j <= end; ++j)
          acc += h[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(end - j)];
        break;
      }
    }
    out[static_cast<std::size_t>(k)] = acc;
  }
  return out;
}

inline std::string to_string(Prefilter p) {
  switch (p) {
    case Prefilter::None: return "none";
    case Prefilter::Boxcar: return "boxcar";
    case Prefilter::Lowpass: return "lowpass";
  }
  return "none";
}

inline Prefilter prefilter_from_string(const std::string& s) {
  if (s == "none") return Prefilter::None;
  if (s == "boxcar") return Prefilter::Boxcar;
  if (s == "lowpass") return Prefilter::Lowpass;
  throw DomainError("unknown prefilter '" + s + "'");
}

struct FilterBank {
  int n_channels = 0;
  int n_taps = kDefaultTaps;
  std::vector<double> taps;  // row-major [channel][tap]
  DecimationSpec decimation;
  int latency = kDefaultLatency;
  double nyquist_rate = 1.0;  // output sample rate, Hz

  double tap(int ch, int j) const { return taps[static_cast<std::size_t>(ch * n_taps + j)]; }
  double& tap(int ch, int j) { return taps[static_cast<std::size_t>(ch * n_taps + j)]; }

  friend FilterBank operator+(FilterBank a, const FilterBank& b) {
    detail::require(a.taps.size() == b.taps.size(), "FilterBank: shape mismatch");
    for (std::size_t i = 0; i < a.taps.size(); ++i) a.taps[i] += b.taps[i];
    return a;
  }
};

inline FilterBank zero_bank(int n_channels, int n_taps, const DecimationSpec& decimation,
                            double nyquist_rate) {
  FilterBank b;
  b.n_channels = n_channels;
  b.n_taps = n_taps;
  b.taps.assign(static_cast<std::size_t>(n_channels * n_taps), 0.0);
  b.decimation = decimation;
  b.nyquist_rate = nyquist_rate;
  return b;
}

struct TrainingReport {
  double residual_mse = 0.0;  // V^2
  double condition = 0.0;     // of the regularized normal-equations matrix
  std::int64_t samples_used = 0;
  int latency = kDefaultLatency;
};

struct DecimatedControls {
  Eigen::MatrixXd values;  // N x M
  std::int64_t trimmed = 0;
  int decimation = 1;
  std::int64_t warmup = 0;  // leading decimated samples inside the record warm-up

  Eigen::Index length() const { return values.cols(); }
};

inline DecimatedControls decimate_controls(const SimRecord& rec, const DecimationSpec& spec) {
  detail::require(spec.factor >= 1, "decimate_controls: decimation must be >= 1");
  const int d = spec.factor;
  DecimatedControls out;
  out.decimation = d;
  const std::int64_t m = rec.n_cycles / d;
  out.trimmed = rec.n_cycles - m * d;
  out.warmup = (rec.warmup_cycles + d - 1) / d;
  out.values.resize(rec.n_stages, m);
  std::vector<double> x(static_cast<std::size_t>(rec.n_cycles));
  for (int l = 0; l < rec.n_stages; ++l) {
    for (std::int64_t k = 0; k < rec.n_cycles; ++k) x[static_cast<std::size_t>(k)] = rec.bit(l, k);
    const auto y = decimate(x, spec);
    for (std::int64_t k = 0; k < m; ++k) out.values(l, k) = y[static_cast<std::size_t>(k)];
  }
  return out;
}

inline DecimatedControls decimate_controls(const SimRecord& rec, int decimation, bool pre_average) {
  return decimate_controls(rec, DecimationSpec{decimation, pre_average ? Prefilter::Boxcar : Prefilter::None});
}

inline std::vector<double> estimate(const DecimatedControls& dec, const FilterBank& bank) {
  detail::require(dec.values.rows() == bank.n_channels, "estimate: channel count mismatch");
  const auto m = dec.length();
  std::vector<double> out(static_cast<std::size_t>(m), 0.0);
  for (Eigen::Index k = 0; k < m; ++k) {
    double acc = 0.0;
    for (int l = 0; l < bank.n_channels; ++l)
      for (int j = 0; j < bank.n_taps && j <= k; ++j) acc += bank.tap(l, j) * dec.values(l, k - j);
    out[static_cast<std::size_t>(k)] = acc;
  }
  return out;
}

inline std::vector<double> estimate(const SimRecord& rec, const FilterBank& bank) {
  return estimate(decimate_controls(rec, bank.decimation), bank);
}

struct TrainOptions {
  int taps = kDefaultTaps;
  DecimationSpec decimation;
  int latency = kDefaultLatency;
  bool auto_latency = false;  // scan latency 0..taps-1, keep the best residual
  double ridge = kDefaultRidge;
  double nyquist_rate = 1.0;
};

namespace detail {

struct Regression {
  Eigen::MatrixXd x;  // samples x (N * taps)
  Eigen::VectorXd y;
};

inline Regression build_regression(const DecimatedControls& dec, std::span<const double> reference,
                                   int taps, int latency) {
  const int n = static_cast<int>(dec.values.rows());
  const std::int64_t m = std::min<std::int64_t>(dec.length(), static_cast<std::int64_t>(reference.size()) + latency);
  const std::int64_t k0 = std::max<std::int64_t>({dec.warmup, taps - 1, latency});
  require(m > k0, "train_filters: record too short after warm-up");
  Regression r;
  r.x.resize(m - k0, n * taps);
  r.y.resize(m - k0);
  for (std::int64_t k = k0; k < m; ++k) {
    const auto row = k - k0;
    for (int l = 0; l < n; ++l)
      for (int j = 0; j < taps; ++j) r.x(row, l * taps + j) = dec.values(l, k - j);
    r.y(row) = reference[static_cast<std::size_t>(k - latency)];
  }
  return r;
}

inline std::pair<Eigen::VectorXd, TrainingReport> solve_least_squares(const Regression& r, double ridge) {
  const auto p = r.x.cols();
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
  gram.selfadjointView<Eigen::Lower>().rankUpdate(r.x.transpose());
  gram = gram.selfadjointView<Eigen::Lower>();
  gram.diagonal().array() += ridge;
  const Eigen::VectorXd rhs = r.x.transpose() * r.y;

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  TrainingReport rep;
  rep.condition = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  rep.samples_used = r.x.rows();
  if (ridge == 0.0 && !(lo > hi * 1e-13))
    throw NumericalError("train_filters: normal equations are rank deficient; use ridge > 0");
  const Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success)
    throw NumericalError("train_filters: normal equations are not positive definite; use ridge > 0");
  Eigen::VectorXd h = llt.solve(rhs);
  rep.residual_mse = (r.y - r.x * h).squaredNorm() / static_cast<double>(r.x.rows());
  return {std::move(h), rep};
}

inline FilterBank bank_from_vector(const Eigen::VectorXd& h, int n, const TrainOptions& opt, int latency) {
  auto bank = zero_bank(n, opt.taps, opt.decimation, opt.nyquist_rate);
  bank.latency = latency;
  for (Eigen::Index i = 0; i < h.size(); ++i) bank.taps[static_cast<std::size_t>(i)] = h(i);
  return bank;
}

}  // namespace detail

/// Training residual of an arbitrary bank on the same regression problem.
inline double training_residual(const DecimatedControls& dec, std::span<const double> reference,
                                 const FilterBank& bank) {
  const auto r = detail::build_regression(dec, reference, bank.n_taps, bank.latency);
  Eigen::VectorXd h = Eigen::Map<const Eigen::VectorXd>(bank.taps.data(), static_cast<Eigen::Index>(bank.taps.size()));
  return (r.y - r.x * h).squaredNorm() / static_cast<double>(r.x.rows());
}

/// Regularized least-squares fit of the filter bank:
/// min_h sum_k (sum_l (h_l * s_l)[k] - reference[k - L])^2 + ridge * |h|^2.
/// reference[i] is the target for decimated sample i.
inline std::pair<FilterBank, TrainingReport> train_filters(const DecimatedControls& dec,
                                                           std::span<const double> reference,
                                                           const TrainOptions& opt) {
  detail::require(opt.taps >= 1, "train_filters: taps must be >= 1");
  detail::require(opt.ridge >= 0.0, "train_filters: ridge must be >= 0");
  detail::require(opt.latency >= 0 && opt.latency < opt.taps, "train_filters: latency must lie in [0, taps)");
  const int n = static_cast<int>(dec.values.rows());
  const std::int64_t params = static_cast<std::int64_t>(n) * opt.taps;

  auto fit = [&](int latency) {
    const auto reg = detail::build_regression(dec, reference, opt.taps, latency);
    detail::require(reg.x.rows() >= 10 * params,
                    "train_filters: need at least 10 samples per filter coefficient");
    auto [h, rep] = detail::solve_least_squares(reg, opt.ridge);
    rep.latency = latency;
    return std::make_pair(detail::bank_from_vector(h, n, opt, latency), rep);
  };

  if (!opt.auto_latency) return fit(opt.latency);
  auto best = fit(0);
  for (int latency = 1; latency < opt.taps; ++latency) {
    auto cand = fit(latency);
    if (cand.second.residual_mse < best.second.residual_mse) best = std::move(cand);
  }
  return best;
}

inline std::pair<FilterBank, TrainingReport> train_filters(const SimRecord& training,
                                                           std::span<const double> reference,
                                                           const TrainOptions& opt) {
  return train_filters(decimate_controls(training, opt.decimation), reference, opt);
}

struct LmsOptions {
  double step = 0.5;  // normalized step size
  int epochs = 1000;
  double decay_epochs = 100.0;
};

/// Normalized LMS on the same model as train_filters. The step decays as
/// step / (1 + epoch / decay_epochs) so the iterate settles on the
/// least-squares solution of stationary data.
inline std::pair<FilterBank, TrainingReport> train_filters_lms(const DecimatedControls& dec,
                                                               std::span<const double> reference,
                                                               const TrainOptions& opt,
                                                               const LmsOptions& lms) {
  detail::require(lms.step > 0.0 && lms.step < 2.0, "train_filters_lms: step must lie in (0,2)");
  detail::require(lms.epochs >= 1, "train_filters_lms: epochs must be >= 1");
  detail::require(lms.decay_epochs > 0.0, "train_filters_lms: decay_epochs must be positive");
  const int n = static_cast<int>(dec.values.rows());
  const auto reg = detail::build_regression(dec, reference, opt.taps, opt.latency);
  Eigen::VectorXd h = Eigen::VectorXd::Zero(reg.x.cols());
  const Eigen::VectorXd row_energy = reg.x.rowwise().squaredNorm();
  for (int epoch = 0; epoch < lms.epochs; ++epoch) {
    const double mu = lms.step / (1.0 + epoch / lms.decay_epochs);
    for (Eigen::Index k = 0; k < reg.x.rows(); ++k) {
      const double err = reg.y(k) - reg.x.row(k).dot(h);
      h += (mu * err / (row_energy(k) + 1e-12)) * reg.x.row(k).transpose();
    }
  }
  TrainingReport rep;
  rep.samples_used = reg.x.rows();
  rep.latency = opt.latency;
  rep.residual_mse = (reg.y - reg.x * h).squaredNorm() / static_cast<double>(reg.x.rows());
  return {detail::bank_from_vector(h, n, opt, opt.latency), rep};
}

inline void to_json(nlohmann::json& j, const FilterBank& b) {
  j = nlohmann::json{{"n_channels", b.n_channels}, {"n_taps", b.n_taps},
                     {"taps", b.taps},             {"decimation", b.decimation.factor},
                     {"pre_average", b.decimation.prefilter == Prefilter::Boxcar},
                     {"prefilter", to_string(b.decimation.prefilter)},
                     {"prefilter_span", b.decimation.span},
                     {"prefilter_cutoff", b.decimation.cutoff},
                     {"latency", b.latency},       {"nyquist_rate_hz", b.nyquist_rate}};
}

inline void from_json(const nlohmann::json& j, FilterBank& b) {
  j.at("n_channels").get_to(b.n_channels);
  j.at("taps").get_to(b.taps);
  b.n_taps = j.value("n_taps", b.n_channels > 0 ? static_cast<int>(b.taps.size()) / b.n_channels : kDefaultTaps);
  j.at("decimation").get_to(b.decimation.factor);
  if (j.contains("prefilter"))
    b.decimation.prefilter = prefilter_from_string(j.at("prefilter").get<std::string>());
  else
    b.decimation.prefilter = j.value("pre_average", true) ? Prefilter::Boxcar : Prefilter::None;
  b.decimation.span = j.value("prefilter_span", 8);
  b.decimation.cutoff = j.value("prefilter_cutoff", 0.75);
  j.at("latency").get_to(b.latency);
  j.at("nyquist_rate_hz").get_to(b.nyquist_rate);
  detail::require(b.taps.size() == static_cast<std::size_t>(b.n_channels * b.n_taps),
                  "FilterBank: taps must hold n_channels * n_taps values");
}

}  // namespace rcchain
