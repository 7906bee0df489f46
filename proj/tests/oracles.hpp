#ifndef SCL_TESTS_ORACLES_HPP
#define SCL_TESTS_ORACLES_HPP

// Independent reference implementations used to check the library's metrics.
// They favour the most literal formulation over speed.

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

struct Counts {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
};

inline Counts confusion(const std::vector<double>& p, const std::vector<int>& y, double thr) {
  Counts c;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool pred = !(p[i] < thr);
    if (y[i] == 1 && pred) ++c.tp;
    if (y[i] == 0 && !pred) ++c.tn;
    if (y[i] == 0 && pred) ++c.fp;
    if (y[i] == 1 && !pred) ++c.fn;
  }
  return c;
}

inline double ratio(double a, double b) { return b == 0 ? 0.0 : a / b; }

struct Rates {
  double acc, precision, recall, f1, tpr, tnr;
};

inline Rates rates(const Counts& c) {
  const double tp = double(c.tp), tn = double(c.tn), fp = double(c.fp), fn = double(c.fn);
  Rates r{};
  r.acc = (tp + tn) / (tp + tn + fp + fn);
  r.precision = ratio(tp, tp + fp);
  r.recall = ratio(tp, tp + fn);
  r.tpr = r.recall;
  r.tnr = ratio(tn, tn + fp);
  r.f1 = ratio(2 * r.precision * r.recall, r.precision + r.recall);
  return r;
}

/// Pairwise AUC: each (positive, negative) pair scores 1, 1/2 or 0.
inline double auc(const std::vector<double>& p, const std::vector<int>& y) {
  double s = 0, pairs = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (y[j] != 0) continue;
      s += p[i] > p[j] ? 1.0 : (p[i] == p[j] ? 0.5 : 0.0);
      pairs += 1;
    }
  }
  return s / pairs;
}

/// Covariance over the product of standard deviations.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = double(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace oracle

#endif  // SCL_TESTS_ORACLES_HPP
