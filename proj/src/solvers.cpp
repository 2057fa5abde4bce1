#include "eqnet/solvers.hpp"

#include <algorithm>
#include <cmath>

namespace eqnet {

namespace {

// Affine projection of one block through the shared orthonormal factor:
// out = z - V (V^T z) + p. V is dim x r row-major; scratch holds r doubles.
inline void affine_project_block(const double* z, const double* p, const Matrix& v, double* scratch, double* out) {
  const std::size_t dim = v.rows;
  const std::size_t r = v.cols;
  std::fill(scratch, scratch + r, 0.0);
  for (std::size_t i = 0; i < dim; ++i) {
    const double* vr = v.row(i);
    const double zi = z[i];
    for (std::size_t j = 0; j < r; ++j) scratch[j] += vr[j] * zi;
  }
  for (std::size_t i = 0; i < dim; ++i) {
    const double* vr = v.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < r; ++j) acc += vr[j] * scratch[j];
    out[i] = z[i] - acc + p[i];
  }
}

// One sum-decoupled step in place. x_bar is a scratch state; returns the
// residual sum_k ||y_k - x_k|| and writes the block sum into v. vt is the
// transposed projector factor (r x dim); scratch_t grows to blocks*r. The
// projections of all blocks run as two matrix products over the stacked
// state, which is the hot path for large block counts.
double minkowski_step_inplace(ProductState& z, ProductState& x_bar, const MinkowskiSum& c, const Matrix& vt,
                              const OperatorFn& f, const Vec& d, double alpha, Vec& scratch_t, Vec& v) {
  const std::size_t dim = z.dim;
  const std::size_t blocks = z.blocks;
  const Matrix& vfac = c.pinv->v;
  const std::size_t r = vfac.cols;
  v.assign(dim, 0.0);
  scratch_t.resize(blocks * r);
  gemm_nn(blocks, dim, r, z.data.data(), vfac.a.data(), scratch_t.data());
  gemm_nn(blocks, r, dim, scratch_t.data(), vt.a.data(), x_bar.data.data());
  for (std::size_t k = 0; k < blocks; ++k) {
    const double* zb = z.block(k);
    const double* pr = c.particular.row(k);
    double* xb = x_bar.block(k);
    for (std::size_t i = 0; i < dim; ++i) {
      xb[i] = zb[i] - xb[i] + pr[i];
      v[i] += xb[i];
    }
  }
  Vec w = f(v, d);
  if (w.size() != dim) throw ShapeError("operator returned wrong dimension");
  double residual = 0.0;
  for (std::size_t k = 0; k < blocks; ++k) {
    double* zb = z.block(k);
    const double* xb = x_bar.block(k);
    double acc = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double s = 2.0 * xb[i] - zb[i] - alpha * w[i];
      const double y = s > 0.0 ? s : 0.0;
      const double delta = y - xb[i];
      acc += delta * delta;
      zb[i] += delta;
    }
    residual += std::sqrt(acc);
  }
  return residual;
}

double intersection_step_inplace(ProductState& z, ProductState& x_bar, const IntersectionList& sets, const OperatorFn& f,
                                 const Vec& d, double alpha, Vec& v) {
  const std::size_t dim = z.dim;
  const std::size_t blocks = z.blocks;
  v.assign(dim, 0.0);
  for (std::size_t k = 0; k < blocks; ++k) {
    Vec zk(z.block(k), z.block(k) + dim);
    Vec xk = project_simple(sets.sets[k], zk);
    std::copy(xk.begin(), xk.end(), x_bar.block(k));
    Vec w = f(xk, d);
    if (w.size() != dim) throw ShapeError("operator returned wrong dimension");
    for (std::size_t i = 0; i < dim; ++i) v[i] += 2.0 * xk[i] - zk[i] - alpha * w[i];
  }
  const double inv = 1.0 / static_cast<double>(blocks);
  for (auto& val : v) val *= inv;
  double residual = 0.0;
  for (std::size_t k = 0; k < blocks; ++k) {
    double* zb = z.block(k);
    const double* xb = x_bar.block(k);
    double acc = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double delta = v[i] - xb[i];
      acc += delta * delta;
      zb[i] += delta;
    }
    residual += std::sqrt(acc);
  }
  return residual;
}

bool finite_state(const Vec& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

Vec apply_T_pg(const Vec& x, const Vec& d, const OperatorFn& f, const ConstraintSpec& c, double alpha) {
  return apply_T_pg(x, d, f, [&](const Vec& z) { return project_direct(c, z); }, alpha);
}

Vec apply_T_pg(const Vec& x, const Vec& d, const OperatorFn& f, const std::function<Vec(const Vec&)>& project, double alpha) {
  Vec w = f(x, d);
  if (w.size() != x.size()) throw ShapeError("operator returned wrong dimension");
  Vec step = x;
  axpy(-alpha, w, step);
  return project(step);
}

DysStep apply_T_dys(const Vec& z, const Vec& d, const OperatorFn& f, const SimpleSet& c1, const SimpleSet& c2, double alpha) {
  DysStep out;
  out.x = project_simple(c1, z);
  Vec w = f(out.x, d);
  if (w.size() != z.size()) throw ShapeError("operator returned wrong dimension");
  Vec arg(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) arg[i] = 2.0 * out.x[i] - z[i] - alpha * w[i];
  Vec y = project_simple(c2, arg);
  out.z_next = z;
  for (std::size_t i = 0; i < z.size(); ++i) out.z_next[i] += y[i] - out.x[i];
  return out;
}

MinkowskiStep apply_T_minkowski(const ProductState& z, const Vec& d, const OperatorFn& f, const MinkowskiSum& c, double alpha) {
  if (z.dim != c.n->cols || z.blocks != c.demands.size()) throw ShapeError("apply_T_minkowski: state shape mismatch");
  MinkowskiStep out;
  out.z_next = z;
  ProductState x_bar(z.dim, z.blocks);
  const Matrix vt = transpose(c.pinv->v);
  Vec scratch;
  minkowski_step_inplace(out.z_next, x_bar, c, vt, f, d, alpha, scratch, out.v);
  return out;
}

IntersectionStep apply_T_intersection(const ProductState& z, const Vec& d, const OperatorFn& f, const IntersectionList& sets,
                                      double alpha) {
  if (z.blocks != sets.sets.size()) throw ShapeError("apply_T_intersection: block count mismatch");
  IntersectionStep out;
  out.z_next = z;
  ProductState x_bar(z.dim, z.blocks);
  Vec v;
  intersection_step_inplace(out.z_next, x_bar, sets, f, d, alpha, v);
  out.x1.assign(x_bar.block(0), x_bar.block(0) + z.dim);
  return out;
}

SolveTrace solve_fixed_point(const OperatorFn& f, const ConstraintSpec& c, const Vec& d, const SolverConfig& cfg) {
  SolveTrace trace;

  auto diverged = [&](SolveTrace t) {
    return DivergenceError("solve_fixed_point: non-finite iterate at iteration " + std::to_string(t.iterations), std::move(t));
  };

  if (const auto* sp = std::get_if<SimplexProduct>(&c.v)) {
    (void)sp;
    Vec x = cfg.init.value_or(Vec(c.dim, 0.0));
    if (x.size() != c.dim) throw ShapeError("solve_fixed_point: init length mismatch");
    for (std::size_t it = 0; it < cfg.max_depth; ++it) {
      Vec next = apply_T_pg(x, d, f, c, cfg.alpha);
      Vec delta = next;
      axpy(-1.0, x, delta);
      const double res = nrm2(delta);
      x = std::move(next);
      trace.iterations = it + 1;
      trace.residuals.push_back(res);
      if (!finite_state(x)) throw diverged(std::move(trace));
      if (res <= cfg.tol) {
        trace.converged = true;
        break;
      }
    }
    trace.z_state = x;
    trace.solution = std::move(x);
    return trace;
  }

  if (const auto* ao = std::get_if<AffineOrthant>(&c.v)) {
    SimpleSet c1{ao->set};
    SimpleSet c2{Orthant{}};
    Vec z = cfg.init.value_or(Vec(c.dim, 0.0));
    if (z.size() != c.dim) throw ShapeError("solve_fixed_point: init length mismatch");
    for (std::size_t it = 0; it < cfg.max_depth; ++it) {
      DysStep step = apply_T_dys(z, d, f, c1, c2, cfg.alpha);
      Vec delta = step.z_next;
      axpy(-1.0, z, delta);
      const double res = nrm2(delta);
      z = std::move(step.z_next);
      trace.iterations = it + 1;
      trace.residuals.push_back(res);
      if (!finite_state(z)) throw diverged(std::move(trace));
      if (res <= cfg.tol) {
        trace.converged = true;
        break;
      }
    }
    trace.solution = project_simple(c1, z);
    trace.z_state = std::move(z);
    return trace;
  }

  if (const auto* ms = std::get_if<MinkowskiSum>(&c.v)) {
    const std::size_t blocks = ms->demands.size();
    ProductState z(c.dim, blocks);
    if (cfg.init) {
      if (cfg.init->size() != z.data.size()) throw ShapeError("solve_fixed_point: init length mismatch");
      z.data = *cfg.init;
    }
    ProductState x_bar(c.dim, blocks);
    const Matrix vt = transpose(ms->pinv->v);
    Vec scratch(ms->pinv->v.cols, 0.0);
    Vec scratch_t;
    Vec v;
    for (std::size_t it = 0; it < cfg.max_depth; ++it) {
      const double res = minkowski_step_inplace(z, x_bar, *ms, vt, f, d, cfg.alpha, scratch_t, v);
      trace.iterations = it + 1;
      trace.residuals.push_back(res);
      if (!finite_state(z.data)) throw diverged(std::move(trace));
      if (res <= cfg.tol) {
        trace.converged = true;
        break;
      }
    }
    // Output map: block sum of the affine projections of the final state.
    Vec sum(c.dim, 0.0);
    for (std::size_t k = 0; k < blocks; ++k) {
      affine_project_block(z.block(k), ms->particular.row(k), ms->pinv->v, scratch.data(), x_bar.block(k));
      const double* xb = x_bar.block(k);
      for (std::size_t i = 0; i < c.dim; ++i) sum[i] += xb[i];
    }
    trace.solution = std::move(sum);
    trace.zbar_state = std::move(z);
    return trace;
  }

  const auto& il = std::get<IntersectionList>(c.v);
  const std::size_t blocks = il.sets.size();
  ProductState z(c.dim, blocks);
  if (cfg.init) {
    if (cfg.init->size() != z.data.size()) throw ShapeError("solve_fixed_point: init length mismatch");
    z.data = *cfg.init;
  }
  ProductState x_bar(c.dim, blocks);
  Vec v;
  for (std::size_t it = 0; it < cfg.max_depth; ++it) {
    const double res = intersection_step_inplace(z, x_bar, il, f, d, cfg.alpha, v);
    trace.iterations = it + 1;
    trace.residuals.push_back(res);
    if (!finite_state(z.data)) throw diverged(std::move(trace));
    if (res <= cfg.tol) {
      trace.converged = true;
      break;
    }
  }
  Vec z1(z.block(0), z.block(0) + c.dim);
  trace.solution = project_simple(il.sets[0], z1);
  trace.zbar_state = std::move(z);
  return trace;
}

}  // namespace eqnet
