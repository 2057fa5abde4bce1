#pragma once

// Fixed-point machinery for constrained equilibrium problems: a projected
// gradient step, a three-operator splitting step, and its two product-space
// liftings (sum-decomposed and intersection-decomposed feasible sets), plus
// the iteration driver.
//
// Operator convention: f(x, d) is the game gradient at joint action x under
// context d. Every step routine performs exactly one update; the driver
// iterates to a residual tolerance.

#include <cstddef>
#include <functional>
#include <optional>

#include "eqnet/common.hpp"
#include "eqnet/constraints.hpp"

namespace eqnet {

using OperatorFn = std::function<Vec(const Vec& x, const Vec& d)>;

struct SolverConfig {
  double alpha = 1.0;
  double tol = 1e-4;
  std::size_t max_depth = 50;
  std::optional<Vec> init;  // flattened state; zeros when absent
};

struct SolveTrace {
  std::size_t iterations = 0;
  Vec residuals;  // one entry per iteration
  bool converged = false;
  Vec solution;
  // Final internal iterate; gradient computations re-apply the step operator
  // to it. Exactly one of the two is populated, by algorithm.
  Vec z_state;             // flat state (projected-gradient and two-set splitting)
  ProductState zbar_state; // lifted state (sum and intersection decouplings)
};

struct DivergenceError : std::runtime_error {
  SolveTrace trace;
  DivergenceError(const std::string& msg, SolveTrace t) : std::runtime_error(msg), trace(std::move(t)) {}
};

// x <- P_C(x - alpha f(x, d)); C must admit a direct projection.
Vec apply_T_pg(const Vec& x, const Vec& d, const OperatorFn& f, const ConstraintSpec& c, double alpha);
// Overload used for cross-checks: projection supplied by the caller.
Vec apply_T_pg(const Vec& x, const Vec& d, const OperatorFn& f, const std::function<Vec(const Vec&)>& project, double alpha);

struct DysStep {
  Vec z_next;
  Vec x;  // P_C1 of the input state; the solution estimate
};

// z <- z - P1(z) + P2(2 P1(z) - z - alpha f(P1(z), d))
DysStep apply_T_dys(const Vec& z, const Vec& d, const OperatorFn& f, const SimpleSet& c1, const SimpleSet& c2, double alpha);

struct MinkowskiStep {
  ProductState z_next;
  Vec v;  // summed block projections; the solution estimate
};

// Sum-decoupled step: affine-projects each block, evaluates the gradient once
// at the block sum, reflects each block through the orthant.
MinkowskiStep apply_T_minkowski(const ProductState& z, const Vec& d, const OperatorFn& f, const MinkowskiSum& c, double alpha);

struct IntersectionStep {
  ProductState z_next;
  Vec x1;  // first block projection; the solution estimate
};

// Intersection-decoupled step: projects each block onto its own set (one
// gradient evaluation per block), then averages the reflected blocks.
IntersectionStep apply_T_intersection(const ProductState& z, const Vec& d, const OperatorFn& f, const IntersectionList& sets, double alpha);

// Iterates the step matching the constraint variant until the state residual
// (Euclidean norm, summed over blocks for product states) drops to cfg.tol or
// cfg.max_depth steps have run. Non-finite states raise DivergenceError
// carrying the partial trace.
SolveTrace solve_fixed_point(const OperatorFn& f, const ConstraintSpec& c, const Vec& d, const SolverConfig& cfg);

}  // namespace eqnet
