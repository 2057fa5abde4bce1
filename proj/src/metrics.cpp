#include "eqnet/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "eqnet/solvers.hpp"

namespace eqnet {

double trafix(const Vec& x, const Vec& x_star, const TrafixParams& p) {
  if (x.size() != x_star.size()) {
    throw ShapeError("trafix: lengths " + std::to_string(x.size()) + " vs " +
                     std::to_string(x_star.size()));
  }
  if (x.empty()) throw InvalidInputError("trafix: empty vectors");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double rel = std::abs(x[i] - x_star[i]) / (std::abs(x_star[i]) + p.tau);
    if (rel < p.eps) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(x.size());
}

double rel_mse(const Vec& x, const Vec& x_star) {
  if (x.size() != x_star.size()) {
    throw ShapeError("rel_mse: lengths " + std::to_string(x.size()) + " vs " +
                     std::to_string(x_star.size()));
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = x[i] - x_star[i];
    num += e * e;
    den += x_star[i] * x_star[i];
  }
  if (den == 0.0) throw DomainError("rel_mse: reference vector is zero");
  return num / den;
}

namespace {

std::size_t sample_cdf(const Vec& q, double u) {
  double acc = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    acc += q[i];
    if (u < acc) return i;
  }
  return q.size() - 1;
}

Vec softmax_scaled(const Vec& c, double inv_temp) {
  // softmax(-c * inv_temp), max-shifted
  Vec out(c.size());
  double lo = c[0];
  for (double v : c) lo = std::min(lo, v);
  double z = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    out[i] = std::exp(-(c[i] - lo) * inv_temp);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

}  // namespace

PlayTrace simulate_play(const MatrixGameSpec& g, const OperatorModel* model,
                        OpponentPolicy policy2, std::size_t n_games, std::size_t n_contexts,
                        RngStream& rng) {
  if (n_games == 0 || n_contexts == 0) {
    throw InvalidRangeError("simulate_play: n_games and n_contexts must be positive");
  }
  if (policy2 == OpponentPolicy::Nfpn && model == nullptr) {
    throw ConfigError("simulate_play: the learned-opponent policy needs a model");
  }

  const std::size_t a = g.actions;
  GameDefinition def = make_matrix_game(g);
  OperatorFn truth = ground_truth_operator(def);
  SolverConfig truth_cfg;
  truth_cfg.alpha = 0.2;
  truth_cfg.tol = 1e-10;
  truth_cfg.max_depth = 50000;

  PlayTrace trace;
  trace.k_max = n_games;
  trace.y.assign(n_games, 0.0);
  trace.signed_mean.assign(n_games, 0.0);
  switch (policy2) {
    case OpponentPolicy::Optimal: trace.policy_label = "optimal"; break;
    case OpponentPolicy::Nfpn: trace.policy_label = "nfpn"; break;
    case OpponentPolicy::Uniform: trace.policy_label = "uniform"; break;
  }

  for (std::size_t ctx = 0; ctx < n_contexts; ++ctx) {
    Vec d(g.context_dim);
    for (double& v : d) v = rng.uniform(-1.0, 1.0);
    Matrix payoff = context_to_payoff(g, d);

    Vec q2(a, 1.0 / static_cast<double>(a));
    if (policy2 == OpponentPolicy::Optimal) {
      SolveTrace eq = solve_fixed_point(truth, def.constraint, d, truth_cfg);
      q2.assign(eq.solution.begin() + static_cast<std::ptrdiff_t>(a), eq.solution.end());
    } else if (policy2 == OpponentPolicy::Nfpn) {
      SolveTrace pred = nfpn_predict(*model, def.constraint, d, SolverConfig{});
      q2.assign(pred.solution.begin() + static_cast<std::ptrdiff_t>(a), pred.solution.end());
    }

    // player 1's expected cost per action against q2, then the softened response
    Vec cost = matvec_t(payoff, q2);
    Vec q1 = softmax_scaled(cost, 1.0 / g.entropy_weight);

    double cost_sum = 0.0;
    for (std::size_t k = 0; k < n_games; ++k) {
      const std::size_t i = sample_cdf(q1, rng.uniform01());
      const std::size_t j = sample_cdf(q2, rng.uniform01());
      cost_sum += payoff(j, i);
      const double avg = cost_sum / static_cast<double>(k + 1);
      trace.y[k] += std::abs(avg);
      trace.signed_mean[k] += avg;
    }
  }

  const double inv = 1.0 / static_cast<double>(n_contexts);
  for (std::size_t k = 0; k < n_games; ++k) {
    trace.y[k] *= inv;
    trace.signed_mean[k] *= inv;
  }
  return trace;
}

}  // namespace eqnet
