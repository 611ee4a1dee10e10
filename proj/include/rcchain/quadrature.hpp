#pragma once

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

namespace rcchain {

/// Gauss-Legendre nodes and weights on [-1, 1] (Newton iteration on P_n).
struct GaussLegendre {
  std::vector<double> nodes;
  std::vector<double> weights;

  explicit GaussLegendre(int n) : nodes(static_cast<std::size_t>(n)), weights(nodes.size()) {
    for (int i = 0; i < (n + 1) / 2; ++i) {
      double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
      double dp = 0.0;
      for (int iter = 0; iter < 100; ++iter) {
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
          const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        const double dx = p1 / dp;
        x -= dx;
        if (std::abs(dx) < 1e-16) break;
      }
      const double w = 2.0 / ((1.0 - x * x) * dp * dp);
      nodes[static_cast<std::size_t>(i)] = -x;
      nodes[static_cast<std::size_t>(n - 1 - i)] = x;
      weights[static_cast<std::size_t>(i)] = w;
      weights[static_cast<std::size_t>(n - 1 - i)] = w;
    }
  }
};

inline constexpr int kPanelOrder = 16;

/// Composite Gauss-Legendre over [a, b] with 16-point panels. total_nodes
/// is rounded up to a multiple of 16.
template <class F>
double integrate_composite(F&& f, double a, double b, int total_nodes) {
  static const GaussLegendre rule(kPanelOrder);
  const int panels = (total_nodes + kPanelOrder - 1) / kPanelOrder;
  const double width = (b - a) / panels;
  double sum = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double mid = a + (p + 0.5) * width;
    double panel = 0.0;
    for (int k = 0; k < kPanelOrder; ++k)
      panel += rule.weights[static_cast<std::size_t>(k)] *
               f(mid + 0.5 * width * rule.nodes[static_cast<std::size_t>(k)]);
    sum += 0.5 * width * panel;
  }
  return sum;
}

}  // namespace rcchain
