#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "eqnet/numerics.hpp"

using namespace eqnet;

namespace {

Matrix random_matrix(RngStream& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (auto& v : m.a) v = rng.uniform(lo, hi);
  return m;
}

double frob(const Matrix& m) {
  double acc = 0.0;
  for (double v : m.a) acc += v * v;
  return std::sqrt(acc);
}

Matrix reconstruct(const SvdCompact& s) {
  Matrix us = s.u;
  for (std::size_t i = 0; i < us.rows; ++i)
    for (std::size_t j = 0; j < us.cols; ++j) us(i, j) *= s.sigma[j];
  return matmul(us, transpose(s.v));
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.a.size(); ++i) worst = std::max(worst, std::abs(a.a[i] - b.a[i]));
  return worst;
}

double orthonormality_defect(const Matrix& m) {
  Matrix g = matmul(transpose(m), m);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.rows; ++i)
    for (std::size_t j = 0; j < g.cols; ++j) worst = std::max(worst, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
  return worst;
}

}  // namespace

TEST_CASE("svd of identity") {
  Matrix id(3, 3);
  for (int i = 0; i < 3; ++i) id(i, i) = 1.0;
  SvdCompact s = svd_compact(id);
  REQUIRE(s.sigma.size() == 3);
  for (double v : s.sigma) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("svd of singular diagonal drops the zero value") {
  Matrix m(3, 3);
  m(0, 0) = 3.0;
  m(2, 2) = 2.0;
  SvdCompact s = svd_compact(m);
  REQUIRE(s.sigma.size() == 2);
  CHECK(s.sigma[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(s.sigma[1] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("svd reconstruction and orthonormality on random shapes") {
  RngStream rng(11, "svd-shapes");
  for (auto [r, c] : {std::pair<std::size_t, std::size_t>{5, 5}, {8, 3}, {3, 8}, {24, 76}, {1, 6}, {6, 1}}) {
    Matrix m = random_matrix(rng, r, c);
    SvdCompact s = svd_compact(m);
    Matrix rec = reconstruct(s);
    Matrix diff = rec;
    for (std::size_t i = 0; i < diff.a.size(); ++i) diff.a[i] -= m.a[i];
    CHECK(frob(diff) <= 1e-8 * frob(m));
    CHECK(orthonormality_defect(s.u) <= 1e-10);
    CHECK(orthonormality_defect(s.v) <= 1e-10);
    CHECK(max_abs_diff(rec, m) <= 1e-8 * (1.0 + frob(m)));
  }
}

TEST_CASE("svd rejects non-finite input") {
  Matrix m(2, 2);
  m(0, 1) = std::nan("");
  CHECK_THROWS_AS(svd_compact(m), InvalidInputError);
}

TEST_CASE("singular values are nonincreasing") {
  RngStream rng(12, "svd-order");
  Matrix m = random_matrix(rng, 10, 7);
  SvdCompact s = svd_compact(m);
  for (std::size_t i = 0; i + 1 < s.sigma.size(); ++i) CHECK(s.sigma[i] >= s.sigma[i + 1]);
}

TEST_CASE("pinv of a row of ones splits mass evenly") {
  Matrix n(1, 2);
  n(0, 0) = 1.0;
  n(0, 1) = 1.0;
  PinvFactor p = make_pinv(n);
  Vec x = pinv_apply(p, {1.0});
  CHECK(x[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(x[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("pinv of invertible diagonal inverts") {
  Matrix m(2, 2);
  m(0, 0) = 2.0;
  m(1, 1) = 4.0;
  PinvFactor p = make_pinv(m);
  Vec x = pinv_apply(p, {2.0, 4.0});
  CHECK(x[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(x[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pinv_apply rejects wrong-length input") {
  Matrix m(2, 3);
  m(0, 0) = 1.0;
  PinvFactor p = make_pinv(m);
  CHECK_THROWS_AS(pinv_apply(p, Vec(3, 0.0)), ShapeError);
}

TEST_CASE("Moore-Penrose identity M pinv(M) M = M on random matrices") {
  RngStream rng(13, "moore-penrose");
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t r = 1 + static_cast<std::size_t>(rng.uniform(0.0, 50.0));
    const std::size_t c = 1 + static_cast<std::size_t>(rng.uniform(0.0, 50.0));
    Matrix m = random_matrix(rng, r, c);
    if (trial % 3 == 0 && r > 2 && c > 2) {
      // Force rank deficiency with an outer-product factor.
      const std::size_t k = std::max<std::size_t>(1, std::min(r, c) / 2);
      m = matmul(random_matrix(rng, r, k), random_matrix(rng, k, c));
    }
    PinvFactor p = make_pinv(m);
    // Columns of M pinv(M) M, assembled one application at a time.
    Matrix mpm(r, c);
    for (std::size_t j = 0; j < c; ++j) {
      Vec col(r);
      for (std::size_t i = 0; i < r; ++i) col[i] = m(i, j);
      Vec t = pinv_apply(p, col);
      Vec back = matvec(m, t);
      for (std::size_t i = 0; i < r; ++i) mpm(i, j) = back[i];
    }
    Matrix diff = mpm;
    for (std::size_t i = 0; i < diff.a.size(); ++i) diff.a[i] -= m.a[i];
    CHECK(frob(diff) <= 1e-7 * frob(m));
  }
}

TEST_CASE("raw buffer product matches an index-wise reference") {
  RngStream rng(29, "gemm-oracle");
  // Shapes chosen to cover the blocked rows, the scalar row tail, and the
  // degenerate inner dimension.
  for (auto [m, k, n] : {std::tuple<std::size_t, std::size_t, std::size_t>{4, 4, 4},
                         {7, 3, 5},
                         {1, 9, 2},
                         {9, 1, 9},
                         {12, 76, 23},
                         {5, 0, 3}}) {
    Matrix a = random_matrix(rng, m, k);
    Matrix b = random_matrix(rng, k, n);
    Vec c(m * n, std::nan(""));
    gemm_nn(m, k, n, a.a.data(), b.a.data(), c.data());
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double ref = 0.0;
        for (std::size_t kk = 0; kk < k; ++kk) ref += a(i, kk) * b(kk, j);
        CHECK(c[i * n + j] == doctest::Approx(ref).epsilon(1e-13));
      }
    }
  }
}

TEST_CASE("uniform draws are deterministic per (seed, stream)") {
  RngStream a(7, "stream-x");
  RngStream b(7, "stream-x");
  RngStream c(7, "stream-y");
  bool any_diff = false;
  for (int i = 0; i < 64; ++i) {
    const std::uint64_t va = a.next_u64();
    CHECK(va == b.next_u64());
    if (va != c.next_u64()) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("sample_uniform range and moments") {
  RngStream rng(42, "moments");
  const std::size_t n = 1000000;
  Vec draws = sample_uniform(rng, 0.0, 1.0, n);
  double mean = 0.0;
  for (double v : draws) {
    REQUIRE(v >= 0.0);
    REQUIRE(v < 1.0);
    mean += v;
  }
  mean /= static_cast<double>(n);
  CHECK(std::abs(mean - 0.5) < 0.01);
}

TEST_CASE("sample_uniform rejects empty ranges") {
  RngStream rng(1, "bad-range");
  CHECK_THROWS_AS(sample_uniform(rng, 1.0, 1.0, 3), InvalidRangeError);
  CHECK_THROWS_AS(sample_uniform(rng, 2.0, 1.0, 3), InvalidRangeError);
}
