#pragma once

#include "qimpulse/types.hpp"

#include <functional>
#include <sstream>

namespace qimpulse {

struct NewtonResult {
  Vec x;
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Solves f(x) = target by Newton's method, halving the step until the
/// residual norm decreases. One extra polish step is taken after the
/// tolerance is met, which on smooth maps lands at roundoff.
template <class F, class J>
NewtonResult damped_newton(const F& f, const J& jac, const Vec& target, Vec x, double tol, int max_iter = 100) {
  NewtonResult out;
  Vec r = f(x) - target;
  double rn = r.norm();
  bool polished = false;
  for (int it = 0; it < max_iter; ++it) {
    out.iterations = it;
    if (rn <= tol) {
      if (polished || rn == 0.0) {
        out.converged = true;
        break;
      }
      polished = true;
    }
    const Mat Jx = jac(x);
    Vec step = Jx.partialPivLu().solve(r);
    if (!step.allFinite()) break;
    double lambda = 1.0;
    Vec xn = x - step;
    Vec rnew = f(xn) - target;
    double rnn = rnew.norm();
    int halvings = 0;
    while (!(rnn < rn) && halvings < 60) {
      lambda *= 0.5;
      xn = x - lambda * step;
      rnew = f(xn) - target;
      rnn = rnew.norm();
      ++halvings;
    }
    if (!(rnn < rn)) {
      // Stalled at roundoff level; accept if already within tolerance.
      out.converged = rn <= tol;
      break;
    }
    x = xn;
    r = rnew;
    rn = rnn;
  }
  if (!out.converged && rn <= tol) out.converged = true;
  out.x = x;
  out.residual = rn;
  return out;
}

inline std::string describe_vec(const Vec& v) {
  std::ostringstream os;
  os << "(";
  for (int i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v(i);
  os << ")";
  return os.str();
}

}  // namespace qimpulse
