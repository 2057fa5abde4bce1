#include "eqnet/games.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace eqnet {

Matrix context_to_payoff(const MatrixGameSpec& g, const Vec& d) {
  if (d.size() != g.context_dim) {
    throw ShapeError("context_to_payoff: context length " + std::to_string(d.size()) +
                     ", expected " + std::to_string(g.context_dim));
  }
  const std::size_t a = g.actions;
  if (g.wb.rows != a * a || g.wb.cols != g.context_dim) {
    throw ShapeError("context_to_payoff: mixing map is " + std::to_string(g.wb.rows) + "x" +
                     std::to_string(g.wb.cols) + ", expected " + std::to_string(a * a) + "x" +
                     std::to_string(g.context_dim));
  }
  Vec m = matvec(g.wb, d);
  Matrix b(a, a);
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < a; ++j) {
      b(i, j) = m[i * a + j] - m[j * a + i];
    }
  }
  return b;
}

Vec matrix_game_gradient(const MatrixGameSpec& g, const Vec& x, const Vec& d) {
  const std::size_t a = g.actions;
  if (x.size() != 2 * a) {
    throw ShapeError("matrix_game_gradient: state length " + std::to_string(x.size()) +
                     ", expected " + std::to_string(2 * a));
  }
  for (double xi : x) {
    if (!(xi > 0.0)) {
      throw DomainError("matrix_game_gradient: strategy component " + std::to_string(xi) +
                        " is not positive");
    }
  }
  const Matrix b = context_to_payoff(g, d);
  Vec out(2 * a);
  // d u1 / d x1 = B^T x2 + w (1 + log x1); d u2 / d x2 = -B x1 + w (1 + log x2)
  for (std::size_t i = 0; i < a; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a; ++j) acc += b(j, i) * x[a + j];
    out[i] = acc + g.entropy_weight * (1.0 + std::log(x[i]));
  }
  for (std::size_t i = 0; i < a; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a; ++j) acc -= b(i, j) * x[j];
    out[a + i] = acc + g.entropy_weight * (1.0 + std::log(x[a + i]));
  }
  return out;
}

Vec capacity_map(const RoadNetwork& net, const Vec& d) {
  if (d.size() != net.context_dim) {
    throw ShapeError("capacity_map: context length " + std::to_string(d.size()) + ", expected " +
                     std::to_string(net.context_dim));
  }
  const std::size_t e = net.base_capacity.size();
  if (net.w.rows != e || net.w.cols != net.context_dim) {
    throw ShapeError("capacity_map: mixing map is " + std::to_string(net.w.rows) + "x" +
                     std::to_string(net.w.cols) + ", expected " + std::to_string(e) + "x" +
                     std::to_string(net.context_dim));
  }
  Vec wd = matvec(net.w, d);
  Vec c(e);
  for (std::size_t i = 0; i < e; ++i) {
    const double clamped = std::clamp(wd[i], -net.eps_cap, net.eps_cap);
    c[i] = net.base_capacity[i] * (1.0 + clamped);
  }
  return c;
}

Vec traffic_gradient(const RoadNetwork& net, const Vec& x, const Vec& d) {
  const std::size_t e = net.free_flow.size();
  if (x.size() != e) {
    throw ShapeError("traffic_gradient: flow length " + std::to_string(x.size()) + ", expected " +
                     std::to_string(e));
  }
  for (double xe : x) {
    if (xe < -1e-10) {
      throw DomainError("traffic_gradient: flow component " + std::to_string(xe) + " is negative");
    }
  }
  const Vec c = capacity_map(net, d);
  Vec t(e);
  for (std::size_t i = 0; i < e; ++i) {
    const double r = std::max(x[i], 0.0) / c[i];
    const double r2 = r * r;
    t[i] = net.free_flow[i] * (1.0 + net.bpr_coeff * r2 * r2);
  }
  return t;
}

Matrix sample_context_matrix(RngStream& rng, std::size_t rows, std::size_t context_dim) {
  if (context_dim == 0) {
    throw InvalidInputError("sample_context_matrix: context_dim must be positive");
  }
  Matrix w(rows, context_dim);
  for (std::size_t i = 0; i < rows; ++i) {
    w(i, 0) = -10.0 * rng.uniform01();  // (-10, 0] since uniform01 lands in [0, 1)
    for (std::size_t j = 1; j < context_dim; ++j) {
      w(i, j) = rng.uniform01();
    }
  }
  return w;
}

RoadNetwork braess_network() {
  RoadNetwork net;
  // Nodes 0..3; arcs in column order 0->2, 2->3, 0->1, 1->2, 1->3
  // (-1 at the tail, +1 at the head).
  net.incidence = Matrix(4, 5);
  const double n[4][5] = {
      {-1, 0, -1, 0, 0},
      {0, 0, 1, -1, -1},
      {1, -1, 0, 1, 0},
      {0, 1, 0, 0, 1},
  };
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 5; ++j) net.incidence(i, j) = n[i][j];
  }
  net.free_flow = {1.0, 2.0, std::sqrt(2.0), std::sqrt(3.0), 1.0};
  net.base_capacity = {0.4, 0.8, 0.8, 0.6, 0.3};
  net.od_pairs = {{0, 3}};
  net.od_demand = {1.0};
  net.eps_cap = 0.4;
  net.bpr_coeff = 1.0;
  net.context_dim = 5;
  net.context_lo = 0.0;
  net.context_hi = 0.25;
  net.w = Matrix(5, 5);  // zero until a dataset builder samples it
  return net;
}

GameDefinition make_matrix_game(MatrixGameSpec g) {
  if (g.actions == 0) throw InvalidInputError("make_matrix_game: zero actions");
  const std::size_t a = g.actions;
  if (g.wb.rows != a * a || g.wb.cols != g.context_dim) {
    throw ShapeError("make_matrix_game: mixing map is " + std::to_string(g.wb.rows) + "x" +
                     std::to_string(g.wb.cols) + ", expected " + std::to_string(a * a) + "x" +
                     std::to_string(g.context_dim));
  }
  ConstraintSpec c = make_simplex_product_spec({a, a});
  return GameDefinition{std::move(g), std::move(c)};
}

GameDefinition make_traffic_game(RoadNetwork net) {
  const std::size_t nodes = net.incidence.rows;
  const std::size_t edges = net.incidence.cols;
  if (net.free_flow.size() != edges || net.base_capacity.size() != edges) {
    throw ShapeError("make_traffic_game: edge attribute lengths disagree with the incidence");
  }
  if (net.od_pairs.size() != net.od_demand.size() || net.od_pairs.empty()) {
    throw InvalidInputError("make_traffic_game: OD pairs and demands must be nonempty and match");
  }
  std::vector<Vec> demands;
  demands.reserve(net.od_pairs.size());
  for (std::size_t k = 0; k < net.od_pairs.size(); ++k) {
    const auto [o, dst] = net.od_pairs[k];
    if (o >= nodes || dst >= nodes || o == dst) {
      throw InvalidInputError("make_traffic_game: OD pair " + std::to_string(k) + " is invalid");
    }
    Vec b(nodes, 0.0);
    b[o] = -net.od_demand[k];
    b[dst] = net.od_demand[k];
    demands.push_back(std::move(b));
  }
  ConstraintSpec c = make_minkowski_spec(net.incidence, demands);
  return GameDefinition{std::move(net), std::move(c)};
}

OperatorFn ground_truth_operator(const GameDefinition& g) {
  if (const auto* mg = std::get_if<MatrixGameSpec>(&g.game)) {
    MatrixGameSpec spec = *mg;
    return [spec](const Vec& x, const Vec& d) {
      Vec xf = x;
      for (double& v : xf) v = std::max(v, 1e-12);
      return matrix_game_gradient(spec, xf, d);
    };
  }
  const RoadNetwork net = std::get<RoadNetwork>(g.game);
  return [net](const Vec& x, const Vec& d) {
    Vec xf = x;
    for (double& v : xf) v = std::max(v, 0.0);
    return traffic_gradient(net, xf, d);
  };
}

}  // namespace eqnet
