#pragma once

// Dense numerics used everywhere else: a row-major matrix type, a compact
// SVD (one-sided Jacobi), pseudoinverse application, and a seeded
// counter-style RNG (splitmix64-seeded xoshiro256++) whose streams are
// reproducible across platforms.

#include <cstddef>
#include <cstdint>
#include <string>

#include "eqnet/common.hpp"

namespace eqnet {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec a;  // row-major, rows*cols entries

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}
  Matrix(std::size_t r, std::size_t c, Vec data);

  double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
  const double* row(std::size_t i) const { return a.data() + i * cols; }
  double* row(std::size_t i) { return a.data() + i * cols; }
};

// y = M x
Vec matvec(const Matrix& m, const Vec& x);
// y = M^T x
Vec matvec_t(const Matrix& m, const Vec& x);
// C = A B
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

// C = A B on contiguous row-major buffers: A is m x k, B is k x n, C is m x n.
// C is overwritten. Accumulation runs j-innermost so each C row is a stream of
// independent axpy updates; there is no scalar dot reduction anywhere.
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c);

double dot(const Vec& x, const Vec& y);
double nrm2(const Vec& x);
// y += alpha * x
void axpy(double alpha, const Vec& x, Vec& y);
bool all_finite(const Vec& x);

struct SvdCompact {
  Matrix u;   // rows x r, orthonormal columns
  Vec sigma;  // r nonincreasing positive values
  Matrix v;   // cols x r, orthonormal columns
};

// Compact SVD with small singular values dropped at rel_threshold * sigma_max.
// Postconditions: sigma nonincreasing, ||M - U diag(sigma) V^T||_F <= 1e-8 ||M||_F.
SvdCompact svd_compact(const Matrix& m, double rel_threshold = 1e-10);

struct PinvFactor {
  Matrix u;
  Vec sigma_inv;
  Matrix v;
  double threshold_used = 0.0;
};

PinvFactor make_pinv(const Matrix& m, double rel_threshold = 1e-10);

// Least-squares / least-norm solve: returns V diag(sigma_inv) U^T y.
Vec pinv_apply(const PinvFactor& p, const Vec& y);

// Deterministic stream generator: state derived from (seed, stream_id) only.
// Draws are identical across platforms; documented in the project README.
class RngStream {
 public:
  RngStream(std::uint64_t seed, const std::string& stream_id);

  std::uint64_t next_u64();
  // Uniform draw in [0, 1), 53-bit resolution.
  double uniform01();
  // Uniform draw in [lo, hi).
  double uniform(double lo, double hi);

  std::uint64_t seed() const { return seed_; }
  const std::string& stream_id() const { return stream_id_; }

 private:
  std::uint64_t s_[4];
  std::uint64_t seed_;
  std::string stream_id_;
};

// n independent draws in [lo, hi); throws InvalidRangeError unless lo < hi.
Vec sample_uniform(RngStream& rng, double lo, double hi, std::size_t n);

}  // namespace eqnet
