#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <doctest.h>

#include "eqnet/games.hpp"
#include "oracles.hpp"

using namespace eqnet;

namespace {

// Test-side scalar costs; the gradient under test must match their finite
// differences without sharing any code path.
double player1_cost(const MatrixGameSpec& g, const Matrix& b, const Vec& x1, const Vec& x2) {
  double bil = 0.0;
  for (std::size_t i = 0; i < g.actions; ++i)
    for (std::size_t j = 0; j < g.actions; ++j) bil += x2[i] * b(i, j) * x1[j];
  double ent = 0.0;
  for (double v : x1) ent += v * std::log(v);
  return bil + g.entropy_weight * ent;
}

double player2_cost(const MatrixGameSpec& g, const Matrix& b, const Vec& x1, const Vec& x2) {
  double bil = 0.0;
  for (std::size_t i = 0; i < g.actions; ++i)
    for (std::size_t j = 0; j < g.actions; ++j) bil -= x2[i] * b(i, j) * x1[j];
  double ent = 0.0;
  for (double v : x2) ent += v * std::log(v);
  return bil + g.entropy_weight * ent;
}

// Congestion potential whose gradient is the travel time vector.
double congestion_potential(const RoadNetwork& net, const Vec& x, const Vec& d) {
  const Vec c = capacity_map(net, d);
  double acc = 0.0;
  for (std::size_t e = 0; e < x.size(); ++e) {
    const double r4 = std::pow(x[e] / c[e], 4.0);
    acc += net.free_flow[e] * (x[e] + net.bpr_coeff * x[e] * r4 / 5.0);
  }
  return acc;
}

MatrixGameSpec cyclic_game() {
  // M encodes the three-action cycle; B = M - M^T is the classic
  // win/lose/draw antisymmetric payoff.
  MatrixGameSpec g;
  g.actions = 3;
  g.context_dim = 1;
  g.wb = Matrix(9, 1);
  const double m[9] = {0, 1, 0, 0, 0, 1, 1, 0, 0};
  for (std::size_t i = 0; i < 9; ++i) g.wb(i, 0) = m[i];
  return g;
}

}  // namespace

TEST_CASE("payoff map is antisymmetric and linear in the context") {
  RngStream rng(11, "payoff");
  MatrixGameSpec g;
  g.actions = 4;
  g.context_dim = 3;
  g.wb = Matrix(16, 3);
  for (double& v : g.wb.a) v = rng.uniform(-1.0, 1.0);

  const Vec d1 = {0.3, -0.7, 1.1};
  const Vec d2 = {-0.2, 0.5, 0.4};
  const Matrix b1 = context_to_payoff(g, d1);
  const Matrix b2 = context_to_payoff(g, d2);
  Vec dsum(3);
  for (std::size_t i = 0; i < 3; ++i) dsum[i] = d1[i] + d2[i];
  const Matrix bsum = context_to_payoff(g, dsum);

  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(b1(i, j) == -b1(j, i));  // exact: correctly rounded subtraction is odd
      CHECK(bsum(i, j) == doctest::Approx(b1(i, j) + b2(i, j)).epsilon(1e-12));
    }
  }
  CHECK(b1(0, 0) == 0.0);

  CHECK_THROWS_AS(context_to_payoff(g, Vec{1.0}), ShapeError);
  MatrixGameSpec bad = g;
  bad.wb = Matrix(15, 3);
  CHECK_THROWS_AS(context_to_payoff(bad, d1), ShapeError);
}

TEST_CASE("cyclic payoff comes out exactly") {
  const MatrixGameSpec g = cyclic_game();
  const Matrix b = context_to_payoff(g, Vec{1.0});
  const double want[3][3] = {{0, 1, -1}, {-1, 0, 1}, {1, -1, 0}};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(b(i, j) == want[i][j]);
}

TEST_CASE("game gradient matches finite differences of both player costs") {
  RngStream rng(23, "game_fd");
  for (int trial = 0; trial < 8; ++trial) {
    MatrixGameSpec g;
    g.actions = 2 + static_cast<std::size_t>(trial % 4);
    g.context_dim = 1 + static_cast<std::size_t>(trial % 3);
    g.entropy_weight = (trial % 2 == 0) ? 1.0 : 2.5;
    g.wb = Matrix(g.actions * g.actions, g.context_dim);
    for (double& v : g.wb.a) v = rng.uniform(-1.0, 1.0);
    Vec d(g.context_dim);
    for (double& v : d) v = rng.uniform(-1.0, 1.0);

    // interior point with mass well away from the log singularity
    Vec x(2 * g.actions);
    for (double& v : x) v = rng.uniform(0.2, 1.0);

    const Matrix b = context_to_payoff(g, d);
    const Vec grad = matrix_game_gradient(g, x, d);
    const double h = 1e-6;
    for (std::size_t i = 0; i < 2 * g.actions; ++i) {
      Vec xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      const bool first = i < g.actions;
      auto split = [&](const Vec& v) {
        Vec x1(v.begin(), v.begin() + g.actions);
        Vec x2(v.begin() + g.actions, v.end());
        return std::make_pair(x1, x2);
      };
      auto [p1, q1] = split(xp);
      auto [p2, q2] = split(xm);
      const double fp = first ? player1_cost(g, b, p1, q1) : player2_cost(g, b, p1, q1);
      const double fm = first ? player1_cost(g, b, p2, q2) : player2_cost(g, b, p2, q2);
      const double fd = (fp - fm) / (2.0 * h);
      CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("game gradient rejects nonpositive strategies and bad shapes") {
  const MatrixGameSpec g = cyclic_game();
  const Vec d = {1.0};
  CHECK_THROWS_AS(matrix_game_gradient(g, Vec{0.5, 0.5, 0.0, 0.2, 0.4, 0.4}, d), DomainError);
  CHECK_THROWS_AS(matrix_game_gradient(g, Vec{0.5, 0.5, -0.1, 0.2, 0.4, 0.5}, d), DomainError);
  CHECK_THROWS_AS(matrix_game_gradient(g, Vec{0.5, 0.5}, d), ShapeError);
}

TEST_CASE("demo network constants and flow conservation") {
  const RoadNetwork net = braess_network();
  CHECK(net.incidence.rows == 4);
  CHECK(net.incidence.cols == 5);
  const double want_n[4][5] = {
      {-1, 0, -1, 0, 0},
      {0, 0, 1, -1, -1},
      {1, -1, 0, 1, 0},
      {0, 1, 0, 0, 1},
  };
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) CHECK(net.incidence(i, j) == want_n[i][j]);
  CHECK(net.free_flow[0] == 1.0);
  CHECK(net.free_flow[1] == 2.0);
  CHECK(net.free_flow[2] == doctest::Approx(std::sqrt(2.0)));
  CHECK(net.free_flow[3] == doctest::Approx(std::sqrt(3.0)));
  CHECK(net.free_flow[4] == 1.0);
  CHECK(net.base_capacity == Vec{0.4, 0.8, 0.8, 0.6, 0.3});
  CHECK(net.eps_cap == 0.4);
  CHECK(net.bpr_coeff == 1.0);
  CHECK(net.context_dim == 5);
  REQUIRE(net.od_pairs.size() == 1);
  CHECK(net.od_pairs[0].first == 0);
  CHECK(net.od_pairs[0].second == 3);
  CHECK(net.od_demand == Vec{1.0});

  // one unit along arcs 0 then 1 (nodes 0, 2, 3) satisfies the demand
  const Vec x = {1.0, 1.0, 0.0, 0.0, 0.0};
  const Vec nx = matvec(net.incidence, x);
  CHECK(nx[0] == -1.0);
  CHECK(nx[1] == 0.0);
  CHECK(nx[2] == 0.0);
  CHECK(nx[3] == 1.0);
}

TEST_CASE("capacity map clamps the context perturbation") {
  RoadNetwork net = braess_network();
  for (std::size_t i = 0; i < 5; ++i) net.w(i, i) = 1.0;
  const Vec d = {0.2, -0.6, 0.0, 0.4, 10.0};
  const Vec c = capacity_map(net, d);
  CHECK(c[0] == doctest::Approx(0.48));
  CHECK(c[1] == doctest::Approx(0.48));  // -0.6 clamps to -0.4
  CHECK(c[2] == doctest::Approx(0.8));
  CHECK(c[3] == doctest::Approx(0.84));
  CHECK(c[4] == doctest::Approx(0.42));  // 10 clamps to +0.4
  CHECK_THROWS_AS(capacity_map(net, Vec{1.0}), ShapeError);
}

TEST_CASE("travel time doubles the free-flow term at capacity") {
  RoadNetwork net = braess_network();  // zero mixing map, so c = base
  const Vec d(5, 0.0);
  const Vec at_cap = net.base_capacity;
  const Vec t = traffic_gradient(net, at_cap, d);
  for (std::size_t e = 0; e < 5; ++e) {
    CHECK(t[e] == doctest::Approx(2.0 * net.free_flow[e]).epsilon(1e-12));
  }
  net.bpr_coeff = 0.5;
  const Vec t2 = traffic_gradient(net, at_cap, d);
  for (std::size_t e = 0; e < 5; ++e) {
    CHECK(t2[e] == doctest::Approx(1.5 * net.free_flow[e]).epsilon(1e-12));
  }
}

TEST_CASE("travel time matches finite differences of the congestion potential") {
  RngStream rng(31, "traffic_fd");
  RoadNetwork net = braess_network();
  for (double& v : net.w.a) v = rng.uniform(-0.5, 0.5);
  for (int trial = 0; trial < 5; ++trial) {
    Vec d(5), x(5);
    for (double& v : d) v = rng.uniform(0.0, 0.25);
    for (double& v : x) v = rng.uniform(0.05, 1.2);
    const Vec t = traffic_gradient(net, x, d);
    const double h = 1e-6;
    for (std::size_t e = 0; e < 5; ++e) {
      Vec xp = x, xm = x;
      xp[e] += h;
      xm[e] -= h;
      const double fd =
          (congestion_potential(net, xp, d) - congestion_potential(net, xm, d)) / (2.0 * h);
      CHECK(t[e] == doctest::Approx(fd).epsilon(1e-7));
    }
  }
}

TEST_CASE("travel time tolerates tiny negative flow but rejects real violations") {
  const RoadNetwork net = braess_network();
  const Vec d(5, 0.0);
  Vec x(5, 0.1);
  x[2] = -1e-10;  // boundary of the tolerance: clamped to zero
  const Vec t = traffic_gradient(net, x, d);
  CHECK(t[2] == doctest::Approx(net.free_flow[2]));
  x[2] = -2e-10;
  CHECK_THROWS_AS(traffic_gradient(net, x, d), DomainError);
  CHECK_THROWS_AS(traffic_gradient(net, Vec{1.0, 1.0}, d), ShapeError);
}

TEST_CASE("context matrix columns follow the documented ranges") {
  RngStream rng(7, "ctx_mat");
  const Matrix w = sample_context_matrix(rng, 200, 4);
  for (std::size_t i = 0; i < 200; ++i) {
    CHECK(w(i, 0) > -10.0);
    CHECK(w(i, 0) <= 0.0);
    for (std::size_t j = 1; j < 4; ++j) {
      CHECK(w(i, j) >= 0.0);
      CHECK(w(i, j) < 1.0);
    }
  }
  // determinism across identically seeded streams
  RngStream rng2(7, "ctx_mat");
  const Matrix w2 = sample_context_matrix(rng2, 200, 4);
  CHECK(w.a == w2.a);
  CHECK_THROWS_AS(sample_context_matrix(rng, 3, 0), InvalidInputError);
}

TEST_CASE("assembled games expose matching constraint geometry") {
  GameDefinition mg = make_matrix_game(cyclic_game());
  CHECK(mg.constraint.dim == 6);
  CHECK(std::holds_alternative<SimplexProduct>(mg.constraint.v));

  GameDefinition tg = make_traffic_game(braess_network());
  CHECK(tg.constraint.dim == 5);
  CHECK(std::holds_alternative<MinkowskiSum>(tg.constraint.v));

  RoadNetwork bad = braess_network();
  bad.od_pairs[0] = {2, 2};
  CHECK_THROWS_AS(make_traffic_game(bad), InvalidInputError);
  bad = braess_network();
  bad.free_flow.pop_back();
  CHECK_THROWS_AS(make_traffic_game(bad), ShapeError);
}

TEST_CASE("cyclic game equilibrium is the uniform profile") {
  GameDefinition def = make_matrix_game(cyclic_game());
  const OperatorFn f = ground_truth_operator(def);
  SolverConfig cfg;
  cfg.alpha = 0.2;
  cfg.tol = 1e-10;
  cfg.max_depth = 20000;
  const SolveTrace t = solve_fixed_point(f, def.constraint, Vec{1.0}, cfg);
  REQUIRE(t.converged);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(t.solution[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
  }
}

TEST_CASE("random antisymmetric games settle on a symmetric softmax fixed point") {
  RngStream rng(47, "sym_eq");
  for (int trial = 0; trial < 4; ++trial) {
    MatrixGameSpec g;
    g.actions = 5;
    g.context_dim = 3;
    g.wb = Matrix(25, 3);
    for (double& v : g.wb.a) v = rng.uniform(-1.0, 1.0);
    Vec d(3);
    for (double& v : d) v = rng.uniform(-1.0, 1.0);

    GameDefinition def = make_matrix_game(g);
    SolverConfig cfg;
    cfg.alpha = 0.2;
    cfg.tol = 1e-11;
    cfg.max_depth = 50000;
    const SolveTrace t = solve_fixed_point(ground_truth_operator(def), def.constraint, d, cfg);
    REQUIRE(t.converged);
    Vec p(t.solution.begin(), t.solution.begin() + 5);
    Vec q(t.solution.begin() + 5, t.solution.end());
    for (std::size_t i = 0; i < 5; ++i) CHECK(p[i] == doctest::Approx(q[i]).epsilon(1e-6));

    // interior stationarity: p recovers itself through the softened best response
    const Matrix b = context_to_payoff(g, d);
    Vec logits(5, 0.0);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j) logits[i] += b(i, j) * p[j];
    double zmax = logits[0];
    for (double v : logits) zmax = std::max(zmax, v);
    double zsum = 0.0;
    for (double v : logits) zsum += std::exp(v - zmax);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(p[i] == doctest::Approx(std::exp(logits[i] - zmax) / zsum).epsilon(1e-5));
    }
  }
}

TEST_CASE("traffic equilibrium satisfies the variational certificate") {
  RngStream rng(59, "traffic_eq");
  RoadNetwork net = braess_network();
  net.w = sample_context_matrix(rng, 5, 5);
  GameDefinition def = make_traffic_game(net);
  const OperatorFn f = ground_truth_operator(def);

  for (int trial = 0; trial < 3; ++trial) {
    Vec d(5);
    for (double& v : d) v = rng.uniform(0.0, 0.25);
    SolverConfig cfg;
    cfg.alpha = 0.02;
    cfg.tol = 1e-10;
    cfg.max_depth = 100000;
    const SolveTrace t = solve_fixed_point(f, def.constraint, d, cfg);
    REQUIRE(t.converged);
    const Vec fx = traffic_gradient(net, t.solution, d);

    // feasible comparators: unit flow split across the three simple paths
    for (int probe = 0; probe < 40; ++probe) {
      double u = rng.uniform01(), v = rng.uniform01();
      if (u + v > 1.0) {
        u = 1.0 - u;
        v = 1.0 - v;
      }
      const double w0 = 1.0 - u - v;  // path over arcs (0,1)
      // remaining paths: arcs (2,4) weight u, arcs (2,3,1) weight v
      const Vec y = {w0, w0 + v, u + v, v, u};
      double gap = 0.0;
      for (std::size_t e = 0; e < 5; ++e) gap += fx[e] * (y[e] - t.solution[e]);
      CHECK(gap >= -1e-7 * (1.0 + std::abs(gap)));
    }
  }
}
