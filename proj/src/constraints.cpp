#include "eqnet/constraints.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace eqnet {

AffineSet make_affine_set(Matrix n, Vec b) {
  if (b.size() != n.rows) throw ShapeError("make_affine_set: b length must equal row count");
  AffineSet s;
  s.pinv = make_pinv(n);
  s.particular = pinv_apply(s.pinv, b);
  Vec residual = matvec(n, s.particular);
  axpy(-1.0, b, residual);
  if (nrm2(residual) > 1e-8 * (1.0 + nrm2(b)))
    throw InvalidInputError("make_affine_set: right-hand side is not reachable (residual " + std::to_string(nrm2(residual)) + ")");
  s.n = std::move(n);
  s.b = std::move(b);
  return s;
}

MinkowskiSum make_minkowski(Matrix n, std::vector<Vec> demands) {
  if (demands.empty()) throw ConfigError("make_minkowski: need at least one block");
  MinkowskiSum ms;
  ms.pinv = std::make_shared<PinvFactor>(make_pinv(n));
  ms.particular = Matrix(demands.size(), n.cols);
  for (std::size_t k = 0; k < demands.size(); ++k) {
    const Vec& b = demands[k];
    if (b.size() != n.rows) throw ShapeError("make_minkowski: demand length must equal row count");
    Vec p = pinv_apply(*ms.pinv, b);
    Vec residual = matvec(n, p);
    axpy(-1.0, b, residual);
    if (nrm2(residual) > 1e-8 * (1.0 + nrm2(b)))
      throw InvalidInputError("make_minkowski: block " + std::to_string(k) + " right-hand side is not reachable");
    std::copy(p.begin(), p.end(), ms.particular.row(k));
  }
  ms.n = std::make_shared<Matrix>(std::move(n));
  ms.demands = std::move(demands);
  return ms;
}

ConstraintSpec make_affine_orthant_spec(Matrix n, Vec b) {
  ConstraintSpec spec;
  spec.dim = n.cols;
  spec.v = AffineOrthant{std::make_shared<AffineSet>(make_affine_set(std::move(n), std::move(b)))};
  return spec;
}

ConstraintSpec make_simplex_product_spec(std::vector<std::size_t> blocks) {
  if (blocks.empty()) throw ConfigError("simplex product: need at least one block");
  ConstraintSpec spec;
  spec.dim = std::accumulate(blocks.begin(), blocks.end(), std::size_t{0});
  for (std::size_t b : blocks)
    if (b == 0) throw ConfigError("simplex product: zero-size block");
  spec.v = SimplexProduct{std::move(blocks)};
  return spec;
}

ConstraintSpec make_minkowski_spec(Matrix n, std::vector<Vec> demands) {
  ConstraintSpec spec;
  spec.dim = n.cols;
  spec.v = make_minkowski(std::move(n), std::move(demands));
  return spec;
}

ConstraintSpec make_intersection_spec(std::size_t dim, std::vector<SimpleSet> sets) {
  if (sets.empty()) throw ConfigError("intersection: need at least one set");
  ConstraintSpec spec;
  spec.dim = dim;
  spec.v = IntersectionList{std::move(sets)};
  return spec;
}

Vec project_orthant(const Vec& z) {
  Vec out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] > 0.0 ? z[i] : 0.0;
  return out;
}

Vec project_box(const Vec& z, const Vec& lo, const Vec& hi) {
  if (lo.size() != z.size() || hi.size() != z.size()) throw ShapeError("project_box: bound length mismatch");
  Vec out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (lo[i] > hi[i]) throw InvalidRangeError("project_box: lo > hi at component " + std::to_string(i));
    out[i] = std::min(std::max(z[i], lo[i]), hi[i]);
  }
  return out;
}

Vec project_simplex(const Vec& z) {
  if (z.empty()) throw ShapeError("project_simplex: empty input");
  Vec u = z;
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cumsum = 0.0;
  double theta = 0.0;
  std::size_t support = 0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumsum += u[j];
    const double cand = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - cand > 0.0) {
      theta = cand;
      support = j + 1;
    }
  }
  (void)support;
  Vec out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = std::max(z[i] - theta, 0.0);
  return out;
}

Vec project_affine(const AffineSet& set, const Vec& z) {
  if (z.size() != set.n.cols) throw ShapeError("project_affine: dimension mismatch");
  // z - pinv(Nz - b) expressed through the orthonormal factor: the range of
  // N^T is spanned by V, so the correction is V V^T z  - particular.
  const Matrix& v = set.pinv.v;
  Vec t = matvec_t(v, z);
  Vec out = z;
  for (std::size_t i = 0; i < v.rows; ++i) {
    const double* r = v.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < v.cols; ++j) acc += r[j] * t[j];
    out[i] += set.particular[i] - acc;
  }
  return out;
}

Vec project_simple(const SimpleSet& set, const Vec& z) {
  return std::visit(
      [&](const auto& s) -> Vec {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, WholeSpace>) return z;
        else if constexpr (std::is_same_v<T, Orthant>) return project_orthant(z);
        else if constexpr (std::is_same_v<T, Box>) return project_box(z, s.lo, s.hi);
        else if constexpr (std::is_same_v<T, Simplex>) return project_simplex(z);
        else return project_affine(*s, z);
      },
      set);
}

Vec project_direct(const ConstraintSpec& spec, const Vec& z) {
  if (z.size() != spec.dim) throw ShapeError("project_direct: dimension mismatch");
  if (const auto* sp = std::get_if<SimplexProduct>(&spec.v)) {
    Vec out(z.size());
    std::size_t off = 0;
    for (std::size_t b : sp->blocks) {
      Vec block(z.begin() + off, z.begin() + off + b);
      Vec p = project_simplex(block);
      std::copy(p.begin(), p.end(), out.begin() + off);
      off += b;
    }
    return out;
  }
  // A one-set intersection is just that set.
  if (const auto* il = std::get_if<IntersectionList>(&spec.v); il && il->sets.size() == 1)
    return project_simple(il->sets[0], z);
  throw ConfigError("project_direct: constraint variant has no direct projection");
}

ProductState project_consensus(const ProductState& s) {
  ProductState out(s.dim, s.blocks);
  if (s.blocks == 0) return out;
  Vec mean(s.dim, 0.0);
  for (std::size_t k = 0; k < s.blocks; ++k) {
    const double* b = s.block(k);
    for (std::size_t i = 0; i < s.dim; ++i) mean[i] += b[i];
  }
  const double inv = 1.0 / static_cast<double>(s.blocks);
  for (auto& v : mean) v *= inv;
  for (std::size_t k = 0; k < s.blocks; ++k) std::copy(mean.begin(), mean.end(), out.block(k));
  return out;
}

Vec projection_jvp(const SimpleSet& set, const Vec& point, const Vec& tangent) {
  if (point.size() != tangent.size()) throw ShapeError("projection_jvp: point/tangent length mismatch");
  return std::visit(
      [&](const auto& s) -> Vec {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, WholeSpace>) {
          return tangent;
        } else if constexpr (std::is_same_v<T, Orthant>) {
          Vec out(tangent.size(), 0.0);
          for (std::size_t i = 0; i < out.size(); ++i)
            if (point[i] >= 0.0) out[i] = tangent[i];
          return out;
        } else if constexpr (std::is_same_v<T, Box>) {
          if (s.lo.size() != point.size()) throw ShapeError("projection_jvp: box bound mismatch");
          Vec out(tangent.size(), 0.0);
          for (std::size_t i = 0; i < out.size(); ++i)
            if (point[i] >= s.lo[i] && point[i] <= s.hi[i]) out[i] = tangent[i];
          return out;
        } else if constexpr (std::is_same_v<T, Simplex>) {
          Vec p = project_simplex(point);
          double sum = 0.0;
          std::size_t support = 0;
          for (std::size_t i = 0; i < p.size(); ++i)
            if (p[i] > 0.0) {
              sum += tangent[i];
              ++support;
            }
          Vec out(tangent.size(), 0.0);
          if (support == 0) return out;
          const double mean = sum / static_cast<double>(support);
          for (std::size_t i = 0; i < p.size(); ++i)
            if (p[i] > 0.0) out[i] = tangent[i] - mean;
          return out;
        } else {
          const AffineSet& aff = *s;
          if (point.size() != aff.n.cols) throw ShapeError("projection_jvp: affine dimension mismatch");
          const Matrix& v = aff.pinv.v;
          Vec t = matvec_t(v, tangent);
          Vec out = tangent;
          for (std::size_t i = 0; i < v.rows; ++i) {
            const double* r = v.row(i);
            double acc = 0.0;
            for (std::size_t j = 0; j < v.cols; ++j) acc += r[j] * t[j];
            out[i] -= acc;
          }
          return out;
        }
      },
      set);
}

ProductState lift(const Vec& x, std::size_t k) {
  if (k == 0) throw InvalidRangeError("lift: need at least one block");
  ProductState s(x.size(), k);
  for (std::size_t i = 0; i < k; ++i) std::copy(x.begin(), x.end(), s.block(i));
  return s;
}

Vec lower(const ProductState& s) {
  Vec out(s.dim, 0.0);
  for (std::size_t k = 0; k < s.blocks; ++k) {
    const double* b = s.block(k);
    for (std::size_t i = 0; i < s.dim; ++i) out[i] += b[i];
  }
  return out;
}

}  // namespace eqnet
