#include "eqnet/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <fstream>
#include <memory>
#include <string>

#include "eqnet/metrics.hpp"

namespace eqnet {

namespace {

const char kModelMagic[4] = {'E', 'Q', 'N', 'M'};
constexpr std::uint32_t kModelVersion = 1;

std::size_t traffic_input_dim(const OperatorModel& m) {
  return m.dims.context_dim + (m.use_flow_input ? m.dims.action_dim : 0);
}

// Expected layer shapes, in storage order.
std::vector<std::pair<std::size_t, std::size_t>> layer_shapes(const OperatorModel& m) {
  std::vector<std::pair<std::size_t, std::size_t>> s;
  if (m.arch == ModelArch::MatrixGameNet) {
    s.push_back({m.dims.action_dim, m.dims.context_dim});
    s.push_back({m.dims.action_dim, m.dims.action_dim});
    return s;
  }
  std::size_t in = traffic_input_dim(m);
  s.push_back({m.dims.hidden_dim, in});
  for (std::size_t l = 1; l < m.dims.n_hidden; ++l) {
    s.push_back({m.dims.hidden_dim, m.dims.hidden_dim});
  }
  s.push_back({m.dims.action_dim, m.dims.hidden_dim});
  return s;
}

void check_model(const OperatorModel& m) {
  const auto shapes = layer_shapes(m);
  if (m.w.size() != shapes.size()) {
    throw ShapeError("model: expected " + std::to_string(shapes.size()) + " weight matrices, got " +
                     std::to_string(m.w.size()));
  }
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    if (m.w[l].rows != shapes[l].first || m.w[l].cols != shapes[l].second) {
      throw ShapeError("model: layer " + std::to_string(l) + " is " + std::to_string(m.w[l].rows) +
                       "x" + std::to_string(m.w[l].cols));
    }
  }
  if (m.arch == ModelArch::MatrixGameNet) {
    if (!m.b.empty()) throw ShapeError("model: matrix-game architecture carries no biases");
  } else {
    if (m.b.size() != shapes.size()) throw ShapeError("model: one bias per layer expected");
    for (std::size_t l = 0; l < shapes.size(); ++l) {
      if (m.b[l].size() != shapes[l].first) {
        throw ShapeError("model: bias " + std::to_string(l) + " length mismatch");
      }
    }
  }
}

void check_cache(const OperatorModel& m, const ForwardCache& c) {
  if (c.arch != m.arch || c.use_flow_input != m.use_flow_input ||
      c.dims.context_dim != m.dims.context_dim || c.dims.action_dim != m.dims.action_dim ||
      c.dims.hidden_dim != m.dims.hidden_dim || c.dims.n_hidden != m.dims.n_hidden) {
    throw InvalidCacheError("model_backward: cache was built for a different model configuration");
  }
  const std::size_t layers = layer_shapes(m).size();
  if (c.pre.size() != layers || c.post.size() != layers) {
    throw InvalidCacheError("model_backward: cache layer count drifted");
  }
}

Vec relu(const Vec& z) {
  Vec out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] > 0.0 ? z[i] : 0.0;
  return out;
}

// x = z - V(V^T z) + p
Vec affine_apply(const Matrix& v, const double* particular, const Vec& z) {
  Vec t = matvec_t(v, z);
  Vec out = z;
  Vec corr = matvec(v, t);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += particular[i] - corr[i];
  return out;
}

// tangent - V(V^T tangent)
Vec affine_jvp(const Matrix& v, const Vec& tangent) {
  Vec t = matvec_t(v, tangent);
  Vec out = tangent;
  Vec corr = matvec(v, t);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= corr[i];
  return out;
}

double mse_loss_and_grad(const Vec& out, const Vec& target, Vec& g) {
  if (out.size() != target.size()) {
    throw ShapeError("jfb_gradient: output length " + std::to_string(out.size()) +
                     " vs target " + std::to_string(target.size()));
  }
  const double inv = 1.0 / static_cast<double>(out.size());
  g.assign(out.size(), 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double e = out[i] - target[i];
    loss += e * e * inv;
    g[i] = 2.0 * e * inv;
  }
  return loss;
}

}  // namespace

OperatorModel make_matrix_game_net(std::size_t action_dim, std::size_t context_dim) {
  if (action_dim == 0 || context_dim == 0) {
    throw InvalidInputError("make_matrix_game_net: zero dimension");
  }
  OperatorModel m;
  m.arch = ModelArch::MatrixGameNet;
  m.dims = {context_dim, action_dim, 0, 0};
  m.w.emplace_back(action_dim, context_dim);
  m.w.emplace_back(action_dim, action_dim);
  return m;
}

OperatorModel make_traffic_net(std::size_t action_dim, std::size_t context_dim,
                               std::size_t hidden_dim, std::size_t n_hidden,
                               bool use_flow_input) {
  if (action_dim == 0 || context_dim == 0 || hidden_dim == 0) {
    throw InvalidInputError("make_traffic_net: zero dimension");
  }
  if (n_hidden == 0) throw InvalidRangeError("make_traffic_net: at least one hidden layer");
  OperatorModel m;
  m.arch = ModelArch::TrafficNet;
  m.dims = {context_dim, action_dim, hidden_dim, n_hidden};
  m.use_flow_input = use_flow_input;
  for (const auto& [r, c] : layer_shapes(m)) {
    m.w.emplace_back(r, c);
    m.b.emplace_back(r, 0.0);
  }
  return m;
}

void init_weights(OperatorModel& m, RngStream& rng) {
  check_model(m);
  for (auto& w : m.w) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols));
    for (double& x : w.a) x = rng.uniform(-bound, bound);
  }
  for (auto& b : m.b) std::fill(b.begin(), b.end(), 0.0);
}

std::size_t param_count(const OperatorModel& m) {
  std::size_t n = 0;
  for (const auto& w : m.w) n += w.a.size();
  for (const auto& b : m.b) n += b.size();
  return n;
}

Vec model_forward(const OperatorModel& m, const Vec& x, const Vec& d, ForwardCache* cache) {
  check_model(m);
  if (x.size() != m.dims.action_dim) {
    throw ShapeError("model_forward: state length " + std::to_string(x.size()) + ", expected " +
                     std::to_string(m.dims.action_dim));
  }
  if (d.size() != m.dims.context_dim) {
    throw ShapeError("model_forward: context length " + std::to_string(d.size()) + ", expected " +
                     std::to_string(m.dims.context_dim));
  }

  if (cache) {
    cache->arch = m.arch;
    cache->dims = m.dims;
    cache->use_flow_input = m.use_flow_input;
    cache->x = x;
    cache->d = d;
    cache->pre.clear();
    cache->post.clear();
  }

  if (m.arch == ModelArch::MatrixGameNet) {
    Vec h = matvec(m.w[0], d);
    Vec s = relu(h);
    Vec u = x;
    for (std::size_t i = 0; i < u.size(); ++i) u[i] += s[i];
    Vec wu = matvec(m.w[1], u);
    Vec out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += wu[i];
    if (cache) {
      cache->input = d;
      cache->pre = {std::move(h), std::move(wu)};
      cache->post = {std::move(s), std::move(u)};
    }
    return out;
  }

  Vec input;
  if (m.use_flow_input) {
    input = x;
    input.insert(input.end(), d.begin(), d.end());
  } else {
    input = d;
  }
  Vec a = input;
  std::vector<Vec> pres, posts;
  const std::size_t layers = m.w.size();
  for (std::size_t l = 0; l < layers; ++l) {
    Vec z = matvec(m.w[l], a);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += m.b[l][i];
    a = (l + 1 < layers) ? relu(z) : z;
    if (cache) {
      pres.push_back(std::move(z));
      posts.push_back(a);
    }
  }
  if (cache) {
    cache->input = std::move(input);
    cache->pre = std::move(pres);
    cache->post = std::move(posts);
  }
  return a;
}

GradientSet zero_gradients(const OperatorModel& m) {
  GradientSet g;
  for (const auto& w : m.w) g.w.emplace_back(w.rows, w.cols);
  for (const auto& b : m.b) g.b.emplace_back(b.size(), 0.0);
  return g;
}

void gradient_axpy(GradientSet& acc, double a, const GradientSet& g) {
  if (acc.w.size() != g.w.size() || acc.b.size() != g.b.size()) {
    throw ShapeError("gradient_axpy: layer count mismatch");
  }
  for (std::size_t l = 0; l < acc.w.size(); ++l) {
    for (std::size_t i = 0; i < acc.w[l].a.size(); ++i) acc.w[l].a[i] += a * g.w[l].a[i];
  }
  for (std::size_t l = 0; l < acc.b.size(); ++l) {
    for (std::size_t i = 0; i < acc.b[l].size(); ++i) acc.b[l][i] += a * g.b[l][i];
  }
}

void gradient_scale(GradientSet& g, double a) {
  for (auto& w : g.w) {
    for (double& x : w.a) x *= a;
  }
  for (auto& b : g.b) {
    for (double& x : b) x *= a;
  }
}

double gradient_max_abs(const GradientSet& g) {
  double m = 0.0;
  for (const auto& w : g.w) {
    for (double x : w.a) m = std::max(m, std::abs(x));
  }
  for (const auto& b : g.b) {
    for (double x : b) m = std::max(m, std::abs(x));
  }
  return m;
}

BackwardResult model_backward(const OperatorModel& m, const ForwardCache& cache,
                              const Vec& upstream) {
  check_model(m);
  check_cache(m, cache);
  if (upstream.size() != m.dims.action_dim) {
    throw ShapeError("model_backward: upstream length mismatch");
  }

  BackwardResult res;
  res.grads = zero_gradients(m);

  if (m.arch == ModelArch::MatrixGameNet) {
    // out = x + W2 u, u = x + relu(W1 d)
    const Vec& u = cache.post[1];
    const Vec& h = cache.pre[0];
    Matrix& gw2 = res.grads.w[1];
    for (std::size_t i = 0; i < gw2.rows; ++i) {
      for (std::size_t j = 0; j < gw2.cols; ++j) gw2(i, j) = upstream[i] * u[j];
    }
    Vec gu = matvec_t(m.w[1], upstream);
    Vec gh(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) gh[i] = h[i] > 0.0 ? gu[i] : 0.0;
    Matrix& gw1 = res.grads.w[0];
    for (std::size_t i = 0; i < gw1.rows; ++i) {
      for (std::size_t j = 0; j < gw1.cols; ++j) gw1(i, j) = gh[i] * cache.d[j];
    }
    res.grad_x = upstream;
    for (std::size_t i = 0; i < res.grad_x.size(); ++i) res.grad_x[i] += gu[i];
    return res;
  }

  const std::size_t layers = m.w.size();
  Vec g = upstream;
  for (std::size_t l = layers; l-- > 0;) {
    const Vec& a_in = (l == 0) ? cache.input : cache.post[l - 1];
    Matrix& gw = res.grads.w[l];
    for (std::size_t i = 0; i < gw.rows; ++i) {
      for (std::size_t j = 0; j < gw.cols; ++j) gw(i, j) = g[i] * a_in[j];
    }
    res.grads.b[l] = g;
    Vec gprev = matvec_t(m.w[l], g);
    if (l > 0) {
      const Vec& z = cache.pre[l - 1];
      for (std::size_t i = 0; i < gprev.size(); ++i) {
        if (z[i] <= 0.0) gprev[i] = 0.0;
      }
    }
    g = std::move(gprev);
  }
  if (m.use_flow_input) {
    res.grad_x.assign(g.begin(), g.begin() + m.dims.action_dim);
  } else {
    res.grad_x.assign(m.dims.action_dim, 0.0);
  }
  return res;
}

OperatorFn nfpn_operator(const OperatorModel& m) {
  check_model(m);
  if (m.arch == ModelArch::TrafficNet && !m.use_flow_input) {
    // Context-only network: the value is a function of d alone, so one solve
    // pays a single forward pass. The cache lives in the closure; share the
    // callable across solves only when they use one d.
    auto memo = std::make_shared<std::pair<Vec, Vec>>();
    auto has = std::make_shared<bool>(false);
    OperatorModel copy = m;
    return [copy, memo, has](const Vec& x, const Vec& d) -> Vec {
      (void)x;
      if (!*has || memo->first != d) {
        memo->first = d;
        memo->second = model_forward(copy, Vec(copy.dims.action_dim, 0.0), d);
        *has = true;
      }
      return memo->second;
    };
  }
  OperatorModel copy = m;
  return [copy](const Vec& x, const Vec& d) { return model_forward(copy, x, d); };
}

SolveTrace nfpn_predict(const OperatorModel& m, const ConstraintSpec& spec, const Vec& d,
                        const SolverConfig& cfg) {
  return solve_fixed_point(nfpn_operator(m), spec, d, cfg);
}

GradientSet jfb_gradient(const OperatorModel& m, const SolveTrace& solved, const Vec& d,
                         const Vec& target, const ConstraintSpec& spec, double alpha,
                         double* loss_out, Vec* output_out) {
  check_model(m);
  Vec g_out;
  GradientSet grads;
  double loss = 0.0;
  Vec out;

  if (const auto* sp = std::get_if<SimplexProduct>(&spec.v)) {
    const Vec& z = solved.z_state;
    if (z.size() != spec.dim) throw ShapeError("jfb_gradient: state length mismatch");
    ForwardCache cache;
    Vec f = model_forward(m, z, d, &cache);
    Vec s = z;
    axpy(-alpha, f, s);
    out = project_direct(spec, s);
    loss = mse_loss_and_grad(out, target, g_out);
    // backprop through the blockwise simplex projection
    Vec gs(s.size(), 0.0);
    std::size_t off = 0;
    for (std::size_t bsize : sp->blocks) {
      Vec pt(s.begin() + off, s.begin() + off + bsize);
      Vec tg(g_out.begin() + off, g_out.begin() + off + bsize);
      Vec gb = projection_jvp(SimpleSet{Simplex{}}, pt, tg);
      std::copy(gb.begin(), gb.end(), gs.begin() + off);
      off += bsize;
    }
    for (double& v : gs) v *= -alpha;
    grads = model_backward(m, cache, gs).grads;
  } else if (const auto* ao = std::get_if<AffineOrthant>(&spec.v)) {
    const Vec& z = solved.z_state;
    if (z.size() != spec.dim) throw ShapeError("jfb_gradient: state length mismatch");
    const AffineSet& aff = *ao->set;
    Vec x = affine_apply(aff.pinv.v, aff.particular.data(), z);
    ForwardCache cache;
    Vec f = model_forward(m, x, d, &cache);
    Vec s(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) s[i] = 2.0 * x[i] - z[i] - alpha * f[i];
    Vec zp(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) zp[i] = z[i] - x[i] + (s[i] > 0.0 ? s[i] : 0.0);
    out = affine_apply(aff.pinv.v, aff.particular.data(), zp);
    loss = mse_loss_and_grad(out, target, g_out);
    Vec ga = affine_jvp(aff.pinv.v, g_out);
    Vec gs(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) gs[i] = s[i] >= 0.0 ? -alpha * ga[i] : 0.0;
    grads = model_backward(m, cache, gs).grads;
  } else if (const auto* ms = std::get_if<MinkowskiSum>(&spec.v)) {
    const ProductState& zbar = solved.zbar_state;
    if (zbar.dim != spec.dim || zbar.blocks != ms->demands.size()) {
      throw ShapeError("jfb_gradient: lifted state shape mismatch");
    }
    const Matrix& v_fac = ms->pinv->v;
    const std::size_t n = spec.dim;
    const std::size_t kk = zbar.blocks;
    std::vector<Vec> xb(kk);
    Vec vsum(n, 0.0);
    for (std::size_t k = 0; k < kk; ++k) {
      Vec zk(zbar.block(k), zbar.block(k) + n);
      xb[k] = affine_apply(v_fac, ms->particular.row(k), zk);
      for (std::size_t i = 0; i < n; ++i) vsum[i] += xb[k][i];
    }
    ForwardCache cache;
    Vec f = model_forward(m, vsum, d, &cache);
    // tracked update and output map
    std::vector<Vec> sk(kk);
    out.assign(n, 0.0);
    for (std::size_t k = 0; k < kk; ++k) {
      const double* zk = zbar.block(k);
      Vec s(n), zp(n);
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = 2.0 * xb[k][i] - zk[i] - alpha * f[i];
        zp[i] = zk[i] - xb[k][i] + (s[i] > 0.0 ? s[i] : 0.0);
      }
      Vec xk_next = affine_apply(v_fac, ms->particular.row(k), zp);
      for (std::size_t i = 0; i < n; ++i) out[i] += xk_next[i];
      sk[k] = std::move(s);
    }
    loss = mse_loss_and_grad(out, target, g_out);
    Vec ga = affine_jvp(v_fac, g_out);  // shared: all blocks project with one V
    Vec gw(n, 0.0);
    for (std::size_t k = 0; k < kk; ++k) {
      for (std::size_t i = 0; i < n; ++i) {
        if (sk[k][i] >= 0.0) gw[i] -= alpha * ga[i];
      }
    }
    grads = model_backward(m, cache, gw).grads;
  } else {
    const auto& il = std::get<IntersectionList>(spec.v);
    const ProductState& zbar = solved.zbar_state;
    const std::size_t kk = il.sets.size();
    if (zbar.dim != spec.dim || zbar.blocks != kk) {
      throw ShapeError("jfb_gradient: lifted state shape mismatch");
    }
    const std::size_t n = spec.dim;
    std::vector<Vec> xb(kk), fw(kk);
    std::vector<ForwardCache> caches(kk);
    for (std::size_t k = 0; k < kk; ++k) {
      Vec zk(zbar.block(k), zbar.block(k) + n);
      xb[k] = project_simple(il.sets[k], zk);
      fw[k] = model_forward(m, xb[k], d, &caches[k]);
    }
    Vec vcons(n, 0.0);
    for (std::size_t k = 0; k < kk; ++k) {
      const double* zk = zbar.block(k);
      for (std::size_t i = 0; i < n; ++i) {
        vcons[i] += 2.0 * xb[k][i] - zk[i] - alpha * fw[k][i];
      }
    }
    const double invk = 1.0 / static_cast<double>(kk);
    for (double& x : vcons) x *= invk;
    Vec z1p(n);
    for (std::size_t i = 0; i < n; ++i) z1p[i] = zbar.block(0)[i] + vcons[i] - xb[0][i];
    out = project_simple(il.sets[0], z1p);
    loss = mse_loss_and_grad(out, target, g_out);
    Vec gv = projection_jvp(il.sets[0], z1p, g_out);
    for (double& x : gv) x *= -alpha * invk;
    grads = zero_gradients(m);
    for (std::size_t k = 0; k < kk; ++k) {
      gradient_axpy(grads, 1.0, model_backward(m, caches[k], gv).grads);
    }
  }

  for (const auto& w : grads.w) {
    if (!all_finite(w.a)) {
      throw DivergenceError("jfb_gradient: non-finite weight gradient", SolveTrace{});
    }
  }
  if (loss_out) *loss_out = loss;
  if (output_out) *output_out = std::move(out);
  return grads;
}

AdamState make_adam(const OperatorModel& m, double lr) {
  if (!(lr > 0.0)) throw InvalidRangeError("make_adam: learning rate must be positive");
  AdamState s;
  s.lr = lr;
  s.m1 = zero_gradients(m);
  s.m2 = zero_gradients(m);
  return s;
}

void adam_step(AdamState& s, OperatorModel& m, const GradientSet& g) {
  if (s.m1.w.size() != m.w.size() || g.w.size() != m.w.size() || s.m1.b.size() != m.b.size() ||
      g.b.size() != m.b.size()) {
    throw ShapeError("adam_step: layer count mismatch");
  }
  s.step += 1;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  auto update = [&](double& w, double& m1, double& m2, double grad) {
    m1 = s.beta1 * m1 + (1.0 - s.beta1) * grad;
    m2 = s.beta2 * m2 + (1.0 - s.beta2) * grad * grad;
    w -= s.lr * (m1 / bc1) / (std::sqrt(m2 / bc2) + s.eps);
  };
  for (std::size_t l = 0; l < m.w.size(); ++l) {
    if (m.w[l].a.size() != g.w[l].a.size()) throw ShapeError("adam_step: weight shape mismatch");
    for (std::size_t i = 0; i < m.w[l].a.size(); ++i) {
      update(m.w[l].a[i], s.m1.w[l].a[i], s.m2.w[l].a[i], g.w[l].a[i]);
    }
  }
  for (std::size_t l = 0; l < m.b.size(); ++l) {
    if (m.b[l].size() != g.b[l].size()) throw ShapeError("adam_step: bias shape mismatch");
    for (std::size_t i = 0; i < m.b[l].size(); ++i) {
      update(m.b[l][i], s.m1.b[l][i], s.m2.b[l][i], g.b[l][i]);
    }
  }
}

std::pair<OperatorModel, TrainHistory> train(OperatorModel m, const EquilibriumDataset& ds,
                                             const ConstraintSpec& game_constraints,
                                             const SolverConfig& solver, AdamState opt,
                                             std::size_t epochs, std::size_t batch,
                                             std::uint64_t seed, ExecPolicy policy) {
  check_model(m);
  if (ds.samples.empty() || ds.train_idx.empty()) {
    throw InvalidInputError("train: empty dataset or train split");
  }
  if (batch == 0) throw InvalidRangeError("train: batch must be positive");
  if (ds.context_dim != m.dims.context_dim || ds.action_dim != m.dims.action_dim) {
    throw ShapeError("train: dataset dims " + std::to_string(ds.context_dim) + "/" +
                     std::to_string(ds.action_dim) + " vs model " +
                     std::to_string(m.dims.context_dim) + "/" +
                     std::to_string(m.dims.action_dim));
  }

  TrainHistory history;
  if (epochs == 0) return {std::move(m), history};

  constexpr std::size_t kChunk = 16;
  std::vector<std::size_t> order = ds.train_idx;

  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    RngStream shuffle_rng(seed, "train_shuffle_epoch_" + std::to_string(epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(shuffle_rng.uniform01() * static_cast<double>(i));
      std::swap(order[i - 1], order[j < i ? j : i - 1]);
    }

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(start + batch, order.size());
      const std::size_t nb = stop - start;
      const std::size_t nchunks = (nb + kChunk - 1) / kChunk;
      std::vector<GradientSet> chunk_grads(nchunks);
      std::vector<double> chunk_loss(nchunks, 0.0);
      std::vector<std::exception_ptr> chunk_err(nchunks);

      // Chunks accumulate serially inside; the cross-chunk reduction below
      // runs in a fixed order, so results don't depend on the policy.
      parallel_for(policy, nchunks, [&](std::size_t ci) {
        try {
          GradientSet acc = zero_gradients(m);
          double loss_acc = 0.0;
          const std::size_t lo = start + ci * kChunk;
          const std::size_t hi = std::min(lo + kChunk, stop);
          for (std::size_t s = lo; s < hi; ++s) {
            const SampleRecord& rec = ds.samples[order[s]];
            SolveTrace solved = nfpn_predict(m, game_constraints, rec.d, solver);
            double loss = 0.0;
            GradientSet g = jfb_gradient(m, solved, rec.d, rec.x_star, game_constraints,
                                         solver.alpha, &loss);
            gradient_axpy(acc, 1.0, g);
            loss_acc += loss;
          }
          chunk_grads[ci] = std::move(acc);
          chunk_loss[ci] = loss_acc;
        } catch (...) {
          chunk_err[ci] = std::current_exception();
        }
      });
      for (const auto& err : chunk_err) {
        if (err) std::rethrow_exception(err);
      }

      GradientSet total = zero_gradients(m);
      double batch_loss = 0.0;
      for (std::size_t ci = 0; ci < nchunks; ++ci) {
        gradient_axpy(total, 1.0, chunk_grads[ci]);
        batch_loss += chunk_loss[ci];
      }
      gradient_scale(total, 1.0 / static_cast<double>(nb));
      adam_step(opt, m, total);
      epoch_loss += batch_loss;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(order.size());

    if (!ds.test_idx.empty()) {
      double mse_sum = 0.0, trafix_sum = 0.0;
      for (std::size_t idx : ds.test_idx) {
        const SampleRecord& s = ds.samples[idx];
        SolveTrace t = nfpn_predict(m, game_constraints, s.d, solver);
        mse_sum += rel_mse(t.solution, s.x_star);
        trafix_sum += trafix(t.solution, s.x_star);
      }
      rec.test_rel_mse = mse_sum / static_cast<double>(ds.test_idx.size());
      rec.test_trafix = trafix_sum / static_cast<double>(ds.test_idx.size());
    }

    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history.push_back(rec);
  }
  return {std::move(m), history};
}

namespace {

void put_u32(std::ofstream& f, std::uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::ifstream& f) {
  std::uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!f) throw FormatError("model file truncated");
  return v;
}

}  // namespace

void save_model(const OperatorModel& m, const std::string& path) {
  check_model(m);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open " + path + " for writing");
  f.write(kModelMagic, 4);
  put_u32(f, kModelVersion);
  const std::uint8_t arch = static_cast<std::uint8_t>(m.arch);
  const std::uint8_t flow = m.use_flow_input ? 1 : 0;
  f.write(reinterpret_cast<const char*>(&arch), 1);
  f.write(reinterpret_cast<const char*>(&flow), 1);
  put_u32(f, static_cast<std::uint32_t>(m.dims.context_dim));
  put_u32(f, static_cast<std::uint32_t>(m.dims.action_dim));
  put_u32(f, static_cast<std::uint32_t>(m.dims.hidden_dim));
  put_u32(f, static_cast<std::uint32_t>(m.dims.n_hidden));
  put_u32(f, static_cast<std::uint32_t>(m.w.size()));
  for (const auto& w : m.w) {
    put_u32(f, static_cast<std::uint32_t>(w.rows));
    put_u32(f, static_cast<std::uint32_t>(w.cols));
    f.write(reinterpret_cast<const char*>(w.a.data()),
            static_cast<std::streamsize>(w.a.size() * sizeof(double)));
  }
  put_u32(f, static_cast<std::uint32_t>(m.b.size()));
  for (const auto& b : m.b) {
    put_u32(f, static_cast<std::uint32_t>(b.size()));
    f.write(reinterpret_cast<const char*>(b.data()),
            static_cast<std::streamsize>(b.size() * sizeof(double)));
  }
  if (!f) throw FormatError("write failed: " + path);
}

OperatorModel load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path);
  char magic[4] = {};
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kModelMagic, 4) != 0) {
    throw FormatError(path + " is not a model container");
  }
  const std::uint32_t version = get_u32(f);
  if (version != kModelVersion) {
    throw FormatError("model format version " + std::to_string(version) + "; this build reads version " +
                      std::to_string(kModelVersion));
  }
  std::uint8_t arch = 0, flow = 0;
  f.read(reinterpret_cast<char*>(&arch), 1);
  f.read(reinterpret_cast<char*>(&flow), 1);
  if (!f || arch > 1 || flow > 1) throw FormatError("corrupt model header");
  OperatorModel m;
  m.arch = static_cast<ModelArch>(arch);
  m.use_flow_input = flow == 1;
  m.dims.context_dim = get_u32(f);
  m.dims.action_dim = get_u32(f);
  m.dims.hidden_dim = get_u32(f);
  m.dims.n_hidden = get_u32(f);
  const std::uint32_t nw = get_u32(f);
  for (std::uint32_t l = 0; l < nw; ++l) {
    const std::uint32_t rows = get_u32(f);
    const std::uint32_t cols = get_u32(f);
    Matrix w(rows, cols);
    f.read(reinterpret_cast<char*>(w.a.data()),
           static_cast<std::streamsize>(w.a.size() * sizeof(double)));
    if (!f) throw FormatError("model file truncated");
    m.w.push_back(std::move(w));
  }
  const std::uint32_t nbv = get_u32(f);
  for (std::uint32_t l = 0; l < nbv; ++l) {
    const std::uint32_t len = get_u32(f);
    Vec b(len, 0.0);
    f.read(reinterpret_cast<char*>(b.data()),
           static_cast<std::streamsize>(len * sizeof(double)));
    if (!f) throw FormatError("model file truncated");
    m.b.push_back(std::move(b));
  }
  try {
    check_model(m);
  } catch (const ShapeError& e) {
    throw FormatError(std::string("model file inconsistent: ") + e.what());
  }
  for (const auto& w : m.w) {
    if (!all_finite(w.a)) throw FormatError("model file carries non-finite weights");
  }
  return m;
}

}  // namespace eqnet
