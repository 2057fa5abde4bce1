#pragma once

// Constraint sets and their projections. Everything downstream (operator
// splitting, training, data generation) reduces to the projections declared
// here plus their Jacobian-vector products.
//
// Composite feasible sets come in four forms:
//   AffineOrthant     {x : Nx = b} intersect {x >= 0}
//   SimplexProduct    product of probability simplices
//   MinkowskiSum      sum_k ({x : Nx = b_k} intersect {x >= 0}), shared N
//   IntersectionList  intersection of directly projectable sets
//
// Only the directly projectable pieces get a closed-form projection; the
// composite sets are handled by the splitting operators in solvers.hpp.

#include <cstddef>
#include <memory>
#include <variant>
#include <vector>

#include "eqnet/common.hpp"
#include "eqnet/numerics.hpp"

namespace eqnet {

struct AffineSet {
  Matrix n;
  Vec b;
  PinvFactor pinv;
  Vec particular;  // pinv applied to b; feasibility certificate
};

// Factors the pseudoinverse and certifies that b is reachable:
// ||N particular - b|| <= 1e-8 (scaled by 1 + ||b||). Throws InvalidInputError
// for unreachable b.
AffineSet make_affine_set(Matrix n, Vec b);

struct WholeSpace {};
struct Orthant {};
struct Box {
  Vec lo, hi;
};
struct Simplex {};

using SimpleSet = std::variant<WholeSpace, Orthant, Box, Simplex, std::shared_ptr<const AffineSet>>;

struct AffineOrthant {
  std::shared_ptr<const AffineSet> set;
};

struct SimplexProduct {
  std::vector<std::size_t> blocks;  // sizes, summing to the ambient dimension
};

// Blocks share one matrix N (and its factorization) but carry distinct b_k.
struct MinkowskiSum {
  std::shared_ptr<const Matrix> n;
  std::shared_ptr<const PinvFactor> pinv;
  std::vector<Vec> demands;  // b_k
  Matrix particular;         // row k = pinv applied to b_k
};

MinkowskiSum make_minkowski(Matrix n, std::vector<Vec> demands);

struct IntersectionList {
  std::vector<SimpleSet> sets;
};

struct ConstraintSpec {
  std::size_t dim = 0;
  std::variant<AffineOrthant, SimplexProduct, MinkowskiSum, IntersectionList> v;
};

ConstraintSpec make_affine_orthant_spec(Matrix n, Vec b);
ConstraintSpec make_simplex_product_spec(std::vector<std::size_t> blocks);
ConstraintSpec make_minkowski_spec(Matrix n, std::vector<Vec> demands);
ConstraintSpec make_intersection_spec(std::size_t dim, std::vector<SimpleSet> sets);

// K equal-size blocks stored contiguously; the state space of the decoupled
// splitting iterations.
struct ProductState {
  std::size_t dim = 0;     // per-block length
  std::size_t blocks = 0;  // K
  Vec data;                // blocks * dim entries

  ProductState() = default;
  ProductState(std::size_t d, std::size_t k) : dim(d), blocks(k), data(d * k, 0.0) {}
  double* block(std::size_t k) { return data.data() + k * dim; }
  const double* block(std::size_t k) const { return data.data() + k * dim; }
};

Vec project_orthant(const Vec& z);
// Componentwise clamp; throws InvalidRangeError if any lo > hi.
Vec project_box(const Vec& z, const Vec& lo, const Vec& hi);
// Euclidean projection onto the unit simplex (sort-and-threshold).
Vec project_simplex(const Vec& z);
// z minus the least-squares correction back onto {Nx = b}.
Vec project_affine(const AffineSet& set, const Vec& z);
// Dispatch over a simple set.
Vec project_simple(const SimpleSet& set, const Vec& z);
// Direct projection where the composite set admits one (SimplexProduct only);
// other composite variants throw ConfigError.
Vec project_direct(const ConstraintSpec& spec, const Vec& z);
// Every block replaced by the blockwise mean.
ProductState project_consensus(const ProductState& s);

// Jacobian-vector product of z -> P(z) at the pre-projection point.
// Boundary convention: components sitting exactly on a bound count as
// inactive (the identity branch).
Vec projection_jvp(const SimpleSet& set, const Vec& point, const Vec& tangent);

// K copies of x.
ProductState lift(const Vec& x, std::size_t k);
// Blockwise sum; the adjoint of lift.
Vec lower(const ProductState& s);

}  // namespace eqnet
