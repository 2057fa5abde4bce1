#include "eqnet/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace eqnet {

Matrix::Matrix(std::size_t r, std::size_t c, Vec data) : rows(r), cols(c), a(std::move(data)) {
  if (a.size() != rows * cols) throw ShapeError("matrix data size does not match rows*cols");
}

Vec matvec(const Matrix& m, const Vec& x) {
  if (x.size() != m.cols) throw ShapeError("matvec: expected length " + std::to_string(m.cols) + ", got " + std::to_string(x.size()));
  Vec y(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double* r = m.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) acc += r[j] * x[j];
    y[i] = acc;
  }
  return y;
}

Vec matvec_t(const Matrix& m, const Vec& x) {
  if (x.size() != m.rows) throw ShapeError("matvec_t: expected length " + std::to_string(m.rows) + ", got " + std::to_string(x.size()));
  Vec y(m.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double* r = m.row(i);
    const double xi = x[i];
    for (std::size_t j = 0; j < m.cols; ++j) y[j] += xi * r[j];
  }
  return y;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw ShapeError("matmul: inner dimensions differ");
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    double* cr = c.row(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = ar[k];
      const double* br = b.row(k);
      for (std::size_t j = 0; j < b.cols; ++j) cr[j] += aik * br[j];
    }
  }
  return c;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
  return t;
}

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c) {
  std::fill(c, c + m * n, 0.0);
  // Four output rows per pass so each loaded B row feeds four accumulator
  // streams. The j loop carries no dependence, so it vectorizes at default
  // floating-point strictness.
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + i * k;
    const double* a1 = a0 + k;
    const double* a2 = a1 + k;
    const double* a3 = a2 + k;
    double* c0 = c + i * n;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double* br = b + kk * n;
      const double f0 = a0[kk];
      const double f1 = a1[kk];
      const double f2 = a2[kk];
      const double f3 = a3[kk];
      for (std::size_t j = 0; j < n; ++j) {
        const double bj = br[j];
        c0[j] += f0 * bj;
        c1[j] += f1 * bj;
        c2[j] += f2 * bj;
        c3[j] += f3 * bj;
      }
    }
  }
  for (; i < m; ++i) {
    const double* ar = a + i * k;
    double* cr = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double f = ar[kk];
      const double* br = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += f * br[j];
    }
  }
}

double dot(const Vec& x, const Vec& y) {
  if (x.size() != y.size()) throw ShapeError("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

double nrm2(const Vec& x) { return std::sqrt(dot(x, x)); }

void axpy(double alpha, const Vec& x, Vec& y) {
  if (x.size() != y.size()) throw ShapeError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

bool all_finite(const Vec& x) {
  for (double v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

namespace {

// One-sided Jacobi on the columns of a (rows >= cols assumed by caller).
// Rotations are accumulated into v. Returns when all column pairs are
// numerically orthogonal.
void jacobi_orthogonalize(Matrix& a, Matrix& v) {
  const std::size_t n = a.cols;
  const std::size_t m = a.rows;
  const double tol = 1e-15;
  const int max_sweeps = 64;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
          const double x = a(k, p), y = a(k, q);
          app += x * x;
          aqq += y * y;
          apq += x * y;
        }
        if (std::abs(apq) <= tol * std::sqrt(app * aqq) || apq == 0.0) continue;
        rotated = true;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t k = 0; k < m; ++k) {
          const double x = a(k, p), y = a(k, q);
          a(k, p) = c * x - s * y;
          a(k, q) = s * x + c * y;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double x = v(k, p), y = v(k, q);
          v(k, p) = c * x - s * y;
          v(k, q) = s * x + c * y;
        }
      }
    }
    if (!rotated) break;
  }
}

SvdCompact svd_tall(const Matrix& m, double rel_threshold) {
  Matrix a = m;
  Matrix v(m.cols, m.cols);
  for (std::size_t i = 0; i < m.cols; ++i) v(i, i) = 1.0;
  jacobi_orthogonalize(a, v);

  const std::size_t n = m.cols;
  Vec sigma(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t k = 0; k < m.rows; ++k) acc += a(k, j) * a(k, j);
    sigma[j] = std::sqrt(acc);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return sigma[i] > sigma[j]; });

  const double smax = sigma.empty() ? 0.0 : sigma[order[0]];
  const double cutoff = rel_threshold * smax;
  std::size_t r = 0;
  while (r < n && sigma[order[r]] > cutoff && sigma[order[r]] > 0.0) ++r;

  SvdCompact out;
  out.u = Matrix(m.rows, r);
  out.v = Matrix(n, r);
  out.sigma.resize(r);
  for (std::size_t jj = 0; jj < r; ++jj) {
    const std::size_t src = order[jj];
    out.sigma[jj] = sigma[src];
    const double inv = 1.0 / sigma[src];
    for (std::size_t k = 0; k < m.rows; ++k) out.u(k, jj) = a(k, src) * inv;
    for (std::size_t k = 0; k < n; ++k) out.v(k, jj) = v(k, src);
  }
  return out;
}

}  // namespace

SvdCompact svd_compact(const Matrix& m, double rel_threshold) {
  if (m.rows == 0 || m.cols == 0) throw ShapeError("svd_compact: empty matrix");
  if (!all_finite(m.a)) throw InvalidInputError("svd_compact: non-finite entries");
  if (m.rows >= m.cols) return svd_tall(m, rel_threshold);
  // Wide case: factor the transpose and swap the U/V roles.
  SvdCompact t = svd_tall(transpose(m), rel_threshold);
  SvdCompact out;
  out.u = std::move(t.v);
  out.v = std::move(t.u);
  out.sigma = std::move(t.sigma);
  return out;
}

PinvFactor make_pinv(const Matrix& m, double rel_threshold) {
  SvdCompact s = svd_compact(m, rel_threshold);
  PinvFactor p;
  p.sigma_inv.resize(s.sigma.size());
  for (std::size_t i = 0; i < s.sigma.size(); ++i) p.sigma_inv[i] = 1.0 / s.sigma[i];
  const double smax = s.sigma.empty() ? 0.0 : s.sigma[0];
  p.threshold_used = rel_threshold * smax;
  p.u = std::move(s.u);
  p.v = std::move(s.v);
  return p;
}

Vec pinv_apply(const PinvFactor& p, const Vec& y) {
  if (y.size() != p.u.rows) throw ShapeError("pinv_apply: expected length " + std::to_string(p.u.rows) + ", got " + std::to_string(y.size()));
  Vec t = matvec_t(p.u, y);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] *= p.sigma_inv[i];
  return matvec(p.v, t);
}

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

RngStream::RngStream(std::uint64_t seed, const std::string& stream_id) : seed_(seed), stream_id_(stream_id) {
  std::uint64_t init = seed ^ rotl(fnv1a(stream_id), 17);
  for (auto& s : s_) s = splitmix64(init);
  // A zero state would be absorbing; splitmix output is never all-zero in
  // practice, but guard anyway.
  if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;
}

std::uint64_t RngStream::next_u64() {
  // xoshiro256++
  const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double RngStream::uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

Vec sample_uniform(RngStream& rng, double lo, double hi, std::size_t n) {
  if (!(lo < hi)) throw InvalidRangeError("sample_uniform: need lo < hi");
  Vec out(n);
  for (auto& v : out) v = rng.uniform(lo, hi);
  return out;
}

}  // namespace eqnet
