#pragma once

// Independent reference computations. These deliberately avoid the library's
// code paths: metrics come from direct pair counting, interpolation from the
// closed-form bilinear formula.

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracles {

struct Metrics {
  std::vector<double> precision, recall, f1;
  std::vector<std::size_t> support;
  double accuracy = 0;
  double macro_p = 0, macro_r = 0, macro_f1 = 0;
  double weighted_p = 0, weighted_r = 0, weighted_f1 = 0;
};

/// Brute force over sample pairs: for each class, count matches one sample at a time.
inline Metrics brute_force_metrics(const std::vector<int>& y_true, const std::vector<int>& y_pred, int K) {
  Metrics m;
  const std::size_t n = y_true.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (y_true[i] == y_pred[i]) ++correct;
  m.accuracy = n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
  for (int k = 0; k < K; ++k) {
    std::size_t tp = 0, predicted = 0, actual = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (y_pred[i] == k) ++predicted;
      if (y_true[i] == k) ++actual;
      if (y_pred[i] == k && y_true[i] == k) ++tp;
    }
    const double p = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    const double r = actual ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
    const double f = (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
    m.precision.push_back(p);
    m.recall.push_back(r);
    m.f1.push_back(f);
    m.support.push_back(actual);
  }
  for (int k = 0; k < K; ++k) {
    m.macro_p += m.precision[k] / K;
    m.macro_r += m.recall[k] / K;
    m.macro_f1 += m.f1[k] / K;
    if (n) {
      const double w = static_cast<double>(m.support[k]) / static_cast<double>(n);
      m.weighted_p += w * m.precision[k];
      m.weighted_r += w * m.recall[k];
      m.weighted_f1 += w * m.f1[k];
    }
  }
  return m;
}

/// Closed-form bilinear sample of a 2x2 grid {{a, b}, {c, d}} at fractional
/// offsets (u, v) in [0, 1] from the top-left texel centre.
inline double bilinear_2x2(double a, double b, double c, double d, double u, double v) {
  return a * (1 - u) * (1 - v) + b * u * (1 - v) + c * (1 - u) * v + d * u * v;
}

}  // namespace oracles
