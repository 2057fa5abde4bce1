#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "eqnet/solvers.hpp"
#include "oracles.hpp"

using namespace eqnet;

namespace {

Vec random_vec(RngStream& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  Vec v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

double dist(const Vec& a, const Vec& b) {
  Vec d = a;
  axpy(-1.0, b, d);
  return nrm2(d);
}

// Strongly monotone affine operator F(x) = (M^T M + mu I + S) x + q with S
// antisymmetric; cocoercive enough for small steps.
struct AffineOp {
  Matrix a;
  Vec q;
  Vec operator()(const Vec& x, const Vec&) const {
    Vec out = matvec(a, x);
    axpy(1.0, q, out);
    return out;
  }
};

AffineOp random_strongly_monotone(RngStream& rng, std::size_t n, double mu) {
  Matrix m(n, n);
  for (auto& v : m.a) v = rng.uniform(-1.0, 1.0);
  Matrix a = matmul(transpose(m), m);
  for (std::size_t i = 0; i < n; ++i) a(i, i) += mu;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = rng.uniform(-0.3, 0.3);
      a(i, j) += s;
      a(j, i) -= s;
    }
  return AffineOp{a, random_vec(rng, n)};
}

}  // namespace

TEST_CASE("dys converges to the projection-type equilibrium on the simplex") {
  // F is the gradient of 0.5||x - (0.9, 0.1)||^2, so the equilibrium over
  // {sum = 1, x >= 0} is (0.9, 0.1) itself.
  Matrix n(1, 2);
  n(0, 0) = 1.0;
  n(0, 1) = 1.0;
  ConstraintSpec c = make_affine_orthant_spec(n, {1.0});
  OperatorFn f = [](const Vec& x, const Vec&) { return Vec{x[0] - 0.9, x[1] - 0.1}; };
  SolverConfig cfg;
  cfg.alpha = 1.0;
  cfg.tol = 1e-12;
  cfg.max_depth = 500;
  SolveTrace t = solve_fixed_point(f, c, {}, cfg);
  CHECK(t.converged);
  CHECK(t.solution[0] == doctest::Approx(0.9).epsilon(1e-8));
  CHECK(t.solution[1] == doctest::Approx(0.1).epsilon(1e-8));
  CHECK(t.residuals.back() <= cfg.tol);
  CHECK(t.residuals.size() == t.iterations);
}

TEST_CASE("intersection splitting solves the axis-constrained problem") {
  // C = {x : x_0 = 0} intersect orthant, F(x) = x - (-1, 2): equilibrium (0, 2).
  Matrix n(1, 2);
  n(0, 0) = 1.0;
  auto aff = std::make_shared<const AffineSet>(make_affine_set(n, {0.0}));
  ConstraintSpec c = make_intersection_spec(2, {SimpleSet{aff}, SimpleSet{Orthant{}}});
  OperatorFn f = [](const Vec& x, const Vec&) { return Vec{x[0] + 1.0, x[1] - 2.0}; };
  SolverConfig cfg;
  cfg.alpha = 1.0;
  cfg.tol = 1e-12;
  cfg.max_depth = 500;
  SolveTrace t = solve_fixed_point(f, c, {}, cfg);
  CHECK(t.converged);
  CHECK(std::abs(t.solution[0]) <= 1e-8);
  CHECK(t.solution[1] == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("projected gradient on a box has the closed-form fixed point") {
  // F(x) = x + b: the equilibrium over the box is the clamp of -b.
  Vec b{0.5, -3.0, 0.2};
  OperatorFn f = [&](const Vec& x, const Vec&) {
    Vec out = x;
    axpy(1.0, b, out);
    return out;
  };
  Vec lo(3, -1.0), hi(3, 1.0);
  auto project = [&](const Vec& z) { return project_box(z, lo, hi); };
  Vec x(3, 0.0);
  for (int i = 0; i < 50; ++i) x = apply_T_pg(x, {}, f, project, 1.0);
  CHECK(x[0] == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(x[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(x[2] == doctest::Approx(-0.2).epsilon(1e-12));
}

TEST_CASE("apply_T_pg requires a directly projectable constraint") {
  Matrix n(1, 2);
  n(0, 0) = 1.0;
  n(0, 1) = 1.0;
  ConstraintSpec c = make_affine_orthant_spec(n, {1.0});
  OperatorFn f = [](const Vec& x, const Vec&) { return x; };
  CHECK_THROWS_AS(apply_T_pg({0.0, 0.0}, {}, f, c, 1.0), ConfigError);
}

TEST_CASE("dys with a whole-space first set collapses to projected gradient") {
  RngStream rng(31, "dys-pg-collapse");
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(rng.uniform(0.0, 4.0));
    AffineOp op = random_strongly_monotone(rng, n, 0.5);
    OperatorFn f = [&](const Vec& x, const Vec& d) { return op(x, d); };
    Vec z = random_vec(rng, n);
    const double alpha = 0.15;
    DysStep step = apply_T_dys(z, {}, f, SimpleSet{WholeSpace{}}, SimpleSet{Orthant{}}, alpha);
    Vec pg = apply_T_pg(z, {}, f, [](const Vec& v) { return project_orthant(v); }, alpha);
    CHECK(dist(step.z_next, pg) <= 1e-14 * (1.0 + nrm2(pg)));
  }
}

TEST_CASE("dys and oracle-projected gradient find the same equilibrium") {
  RngStream rng(32, "dys-vs-pg");
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t dim = 2 + static_cast<std::size_t>(rng.uniform(0.0, 3.0));
    const std::size_t rows = 1 + static_cast<std::size_t>(rng.uniform(0.0, 2.0));
    Matrix n(rows, dim);
    for (auto& v : n.a) v = rng.uniform(-1.0, 1.0);
    Vec feas = random_vec(rng, dim, 0.1, 1.0);
    Vec b = matvec(n, feas);
    AffineOp op = random_strongly_monotone(rng, dim, 1.0);
    OperatorFn f = [&](const Vec& x, const Vec& d) { return op(x, d); };

    ConstraintSpec c = make_affine_orthant_spec(n, b);
    SolverConfig cfg;
    cfg.alpha = 0.1;
    cfg.tol = 1e-11;
    cfg.max_depth = 20000;
    SolveTrace dys = solve_fixed_point(f, c, {}, cfg);
    REQUIRE(dys.converged);

    auto oracle_project = [&](const Vec& z) {
      Vec out;
      REQUIRE(oracles::polyhedral_projection(n, b, z, out));
      return out;
    };
    Vec x(dim, 0.0);
    for (int it = 0; it < 20000; ++it) {
      Vec next = apply_T_pg(x, {}, f, oracle_project, 0.1);
      const double res = dist(next, x);
      x = std::move(next);
      if (res <= 1e-11) break;
    }
    CHECK(dist(dys.solution, x) <= 1e-6);
  }
}

TEST_CASE("single-block sum decomposition matches the flat splitting trace") {
  RngStream rng(33, "minkowski-k1");
  const std::size_t dim = 4;
  Matrix n(2, dim);
  for (auto& v : n.a) v = rng.uniform(-1.0, 1.0);
  Vec b = matvec(n, random_vec(rng, dim, 0.1, 1.0));
  AffineOp op = random_strongly_monotone(rng, dim, 0.8);
  OperatorFn f = [&](const Vec& x, const Vec& d) { return op(x, d); };
  SolverConfig cfg;
  cfg.alpha = 0.2;
  cfg.tol = 1e-10;
  cfg.max_depth = 5000;

  ConstraintSpec flat = make_affine_orthant_spec(n, b);
  ConstraintSpec lifted = make_minkowski_spec(n, {b});
  SolveTrace a = solve_fixed_point(f, flat, {}, cfg);
  SolveTrace bb = solve_fixed_point(f, lifted, {}, cfg);
  REQUIRE(a.converged);
  REQUIRE(bb.converged);
  CHECK(a.iterations == bb.iterations);
  for (std::size_t i = 0; i < a.residuals.size(); ++i) CHECK(std::abs(a.residuals[i] - bb.residuals[i]) <= 1e-12 * (1.0 + a.residuals[i]));
  CHECK(dist(a.solution, bb.solution) <= 1e-10);
}

TEST_CASE("sum decomposition solves a two-commodity problem to a certified equilibrium") {
  RngStream rng(34, "minkowski-cert");
  const std::size_t dim = 5;
  Matrix n(2, dim);
  for (auto& v : n.a) v = rng.uniform(-1.0, 1.0);
  Vec b1 = matvec(n, random_vec(rng, dim, 0.2, 1.0));
  Vec b2 = matvec(n, random_vec(rng, dim, 0.2, 1.0));
  AffineOp op = random_strongly_monotone(rng, dim, 1.0);
  OperatorFn f = [&](const Vec& x, const Vec& d) { return op(x, d); };
  ConstraintSpec c = make_minkowski_spec(n, {b1, b2});
  SolverConfig cfg;
  cfg.alpha = 0.1;
  cfg.tol = 1e-11;
  cfg.max_depth = 50000;
  SolveTrace t = solve_fixed_point(f, c, {}, cfg);
  REQUIRE(t.converged);

  // Certificate: <F(x), y - x> >= -tol for random feasible y = y1 + y2 with
  // y_k in block k (projected there by the oracle).
  Vec fx = f(t.solution, {});
  const double fn = nrm2(fx);
  for (int i = 0; i < 100; ++i) {
    Vec y(dim, 0.0);
    for (const Vec* bk : {&b1, &b2}) {
      Vec z = random_vec(rng, dim, -1.0, 2.0);
      Vec yk;
      REQUIRE(oracles::polyhedral_projection(n, *bk, z, yk));
      axpy(1.0, yk, y);
    }
    Vec diff = y;
    axpy(-1.0, t.solution, diff);
    CHECK(dot(fx, diff) >= -1e-5 * (1.0 + fn * nrm2(diff)));
  }
}

TEST_CASE("non-finite iterates raise a divergence error carrying the trace") {
  ConstraintSpec c = make_simplex_product_spec({2});
  OperatorFn f = [](const Vec& x, const Vec&) { return Vec{std::nan(""), x[1]}; };
  SolverConfig cfg;
  try {
    solve_fixed_point(f, c, {}, cfg);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.trace.iterations == 1);
    CHECK(e.trace.residuals.size() == 1);
  }
}

TEST_CASE("hitting the depth cap reports non-convergence") {
  ConstraintSpec c = make_simplex_product_spec({2});
  // Discontinuous flip operator: the iterate hops between the two vertices.
  OperatorFn f = [](const Vec& x, const Vec&) {
    return x[0] >= x[1] ? Vec{2.0, -2.0} : Vec{-2.0, 2.0};
  };
  SolverConfig cfg;
  cfg.alpha = 1.0;
  cfg.tol = 1e-14;
  cfg.max_depth = 7;
  SolveTrace t = solve_fixed_point(f, c, {}, cfg);
  CHECK(!t.converged);
  CHECK(t.iterations == 7);
  CHECK(t.residuals.size() == 7);
}

TEST_CASE("residual tolerance on cocoercive problems is met well before a generous cap") {
  RngStream rng(35, "cocoercive-cap");
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t dim = 3;
    Matrix n(1, dim);
    for (auto& v : n.a) v = rng.uniform(0.5, 1.5);
    Vec b = matvec(n, random_vec(rng, dim, 0.2, 1.0));
    AffineOp op = random_strongly_monotone(rng, dim, 1.0);
    OperatorFn f = [&](const Vec& x, const Vec& d) { return op(x, d); };
    ConstraintSpec c = make_affine_orthant_spec(n, b);
    SolverConfig cfg;
    cfg.alpha = 0.1;
    cfg.tol = 1e-10;
    cfg.max_depth = 10000;
    SolveTrace t = solve_fixed_point(f, c, {}, cfg);
    CHECK(t.converged);
    CHECK(t.iterations < 10000);
  }
}
