#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rcchain {

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Quadrature, factorization or integrator failure.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// No grid cell reaches the requested SNR.
class InfeasibleError : public std::runtime_error {
 public:
  InfeasibleError(const std::string& msg, double best_snr_db)
      : std::runtime_error(msg), best_snr_db_(best_snr_db) {}
  double best_snr_db() const noexcept { return best_snr_db_; }

 private:
  double best_snr_db_;
};

/// Simulation produced a non-finite state.
class DivergedError : public std::runtime_error {
 public:
  DivergedError(const std::string& msg, std::int64_t cycle)
      : std::runtime_error(msg), cycle_(cycle) {}
  std::int64_t cycle() const noexcept { return cycle_; }

 private:
  std::int64_t cycle_;
};

/// Malformed or truncated record file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void require(bool cond, const char* what) {
  if (!cond) throw DomainError(what);
}
}  // namespace detail

}  // namespace rcchain
