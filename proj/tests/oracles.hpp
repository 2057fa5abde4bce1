#pragma once

// Test-side reference implementations, deliberately independent of the
// library's code paths: support enumeration for simplex projection, active-set
// enumeration for polyhedral projection (with its own dense solver), and
// central finite differences.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "eqnet/numerics.hpp"

namespace oracles {

using eqnet::Matrix;
using eqnet::Vec;

// Gaussian elimination with partial pivoting on a dense square system.
// Returns false if the matrix is numerically singular.
inline bool gauss_solve(std::vector<std::vector<double>> a, Vec rhs, Vec& out) {
  const std::size_t n = rhs.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (std::abs(a[piv][col]) < 1e-12) return false;
    std::swap(a[piv], a[col]);
    std::swap(rhs[piv], rhs[col]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      rhs[r] -= f * rhs[col];
    }
  }
  out.assign(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double acc = rhs[i];
    for (std::size_t j = i + 1; j < n; ++j) acc -= a[i][j] * out[j];
    out[i] = acc / a[i][i];
  }
  return true;
}

// Projection onto the unit simplex by support enumeration (exponential in the
// dimension; intended for dim <= ~12).
inline Vec simplex_projection(const Vec& z) {
  const std::size_t n = z.size();
  Vec best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t mask = 1; mask < (std::size_t{1} << n); ++mask) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (std::size_t{1} << i)) {
        sum += z[i];
        ++count;
      }
    const double shift = (1.0 - sum) / static_cast<double>(count);
    Vec cand(n, 0.0);
    bool feasible = true;
    double dist = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (std::size_t{1} << i)) {
        cand[i] = z[i] + shift;
        if (cand[i] < -1e-12) feasible = false;
      }
      const double d = cand[i] - z[i];
      dist += d * d;
    }
    if (feasible && dist < best_dist) {
      best_dist = dist;
      best = cand;
    }
  }
  return best;
}

// Projection of z onto {x : Nx = b, x >= 0} by enumerating active sets.
// For each candidate set A of components pinned to zero, the equality-
// constrained minimizer is found via its KKT system and screened for
// feasibility; the closest feasible candidate is the projection.
inline bool polyhedral_projection(const Matrix& n, const Vec& b, const Vec& z, Vec& out) {
  const std::size_t dim = n.cols;
  const std::size_t m = n.rows;
  double best_dist = std::numeric_limits<double>::infinity();
  bool found = false;
  for (std::size_t mask = 0; mask < (std::size_t{1} << dim); ++mask) {
    // Free components (not pinned to zero).
    std::vector<std::size_t> free_idx;
    for (std::size_t i = 0; i < dim; ++i)
      if (!(mask & (std::size_t{1} << i))) free_idx.push_back(i);
    const std::size_t f = free_idx.size();
    // KKT for min ||x_F - z_F||^2 s.t. N_F x_F = b:
    //   [ I    N_F^T ] [x_F]   [z_F]
    //   [ N_F  0     ] [ y ] = [ b ]
    const std::size_t sz = f + m;
    std::vector<std::vector<double>> kkt(sz, std::vector<double>(sz, 0.0));
    Vec rhs(sz, 0.0);
    for (std::size_t i = 0; i < f; ++i) {
      kkt[i][i] = 1.0;
      rhs[i] = z[free_idx[i]];
      for (std::size_t r = 0; r < m; ++r) {
        kkt[i][f + r] = n(r, free_idx[i]);
        kkt[f + r][i] = n(r, free_idx[i]);
      }
    }
    for (std::size_t r = 0; r < m; ++r) rhs[f + r] = b[r];
    // Regularize the dual block so redundant rows of N stay solvable; the
    // primal solution is unaffected when the system is consistent.
    for (std::size_t r = 0; r < m; ++r) kkt[f + r][f + r] = -1e-10;
    Vec sol;
    if (!gauss_solve(kkt, rhs, sol)) continue;
    Vec cand(dim, 0.0);
    for (std::size_t i = 0; i < f; ++i) cand[free_idx[i]] = sol[i];
    // Verify the equality constraints actually hold (the KKT system may be
    // inconsistent for this active set).
    double eq_err = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
      double acc = -b[r];
      for (std::size_t i = 0; i < dim; ++i) acc += n(r, i) * cand[i];
      eq_err = std::max(eq_err, std::abs(acc));
    }
    if (eq_err > 1e-6) continue;
    bool feasible = true;
    for (double v : cand)
      if (v < -1e-9) feasible = false;
    if (!feasible) continue;
    double dist = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double d = cand[i] - z[i];
      dist += d * d;
    }
    if (dist < best_dist) {
      best_dist = dist;
      out = cand;
      found = true;
    }
  }
  return found;
}

// Central finite difference of a vector-valued map along one tangent.
inline Vec directional_fd(const std::function<Vec(const Vec&)>& f, const Vec& x, const Vec& t, double h) {
  Vec xp = x, xm = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] += h * t[i];
    xm[i] -= h * t[i];
  }
  Vec fp = f(xp), fm = f(xm);
  Vec out(fp.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (fp[i] - fm[i]) / (2.0 * h);
  return out;
}

// Central finite difference of a scalar function of one coordinate.
inline double scalar_fd(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace oracles
