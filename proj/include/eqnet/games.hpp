#pragma once

// Ground-truth game definitions: entropy-regularized two-player matrix games
// on contextual antisymmetric payoffs, and congestion games on road networks
// with context-modulated capacities.

#include <cstddef>
#include <utility>
#include <variant>

#include "eqnet/common.hpp"
#include "eqnet/constraints.hpp"
#include "eqnet/numerics.hpp"
#include "eqnet/solvers.hpp"

namespace eqnet {

struct MatrixGameSpec {
  std::size_t actions = 0;      // per-player action count
  std::size_t context_dim = 0;  // length of d
  Matrix wb;                    // actions^2 x context_dim, payoff mixing map
  double entropy_weight = 1.0;
  // Componentwise range contexts are drawn from at generation time.
  double context_lo = -1.0;
  double context_hi = 1.0;
};

// B(d) = M - M^T where M is the row-major actions x actions reshape of wb d.
// Antisymmetric by construction, linear in d.
Matrix context_to_payoff(const MatrixGameSpec& g, const Vec& d);

// Joint cost gradient at x = (x1, x2):
//   (B^T x2 + w (1 + log x1), -B x1 + w (1 + log x2)).
// Components of x must be positive (DomainError otherwise).
Vec matrix_game_gradient(const MatrixGameSpec& g, const Vec& x, const Vec& d);

struct RoadNetwork {
  Matrix incidence;  // nodes x edges; -1 at the tail, +1 at the head
  Vec free_flow;
  Vec base_capacity;
  std::vector<std::pair<std::size_t, std::size_t>> od_pairs;  // 0-based (origin, destination)
  Vec od_demand;
  Matrix w;  // edges x context_dim, capacity mixing map
  double eps_cap = 0.4;
  double bpr_coeff = 1.0;  // congestion term weight
  std::size_t context_dim = 0;
  // Componentwise range contexts are drawn from at generation time.
  double context_lo = 0.0;
  double context_hi = 1.0;
};

// c(d) = base .* (1 + clamp(W d, -eps, eps)); positive whenever eps < 1.
Vec capacity_map(const RoadNetwork& net, const Vec& d);

// Travel times t_e = f_e (1 + coeff [x_e / c_e]^4). Flows must be
// nonnegative up to -1e-10 (DomainError otherwise).
Vec traffic_gradient(const RoadNetwork& net, const Vec& x, const Vec& d);

// Capacity mixing map with the documented column law: first column uniform on
// (-10, 0], remaining columns uniform on [0, 1).
Matrix sample_context_matrix(RngStream& rng, std::size_t rows, std::size_t context_dim);

// The four-vertex, five-arc demonstration network with one unit OD pair.
// The mixing map w is left zero; dataset builders fill it from their seed.
RoadNetwork braess_network();

struct GameDefinition {
  std::variant<MatrixGameSpec, RoadNetwork> game;
  ConstraintSpec constraint;
};

// Simplex-product strategy space for the matrix game.
GameDefinition make_matrix_game(MatrixGameSpec g);
// Sum-decomposed flow polytope, one block per OD pair.
GameDefinition make_traffic_game(RoadNetwork net);

// Gradient callable for equilibrium computation. Matrix games floor iterates
// at 1e-12 before the log; congestion costs extend below zero by clamping
// (constant there, preserving monotonicity), since splitting iterates can
// leave the orthant mid-run.
OperatorFn ground_truth_operator(const GameDefinition& g);

}  // namespace eqnet
