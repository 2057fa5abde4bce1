#pragma once

// Evaluation: edgewise accuracy score, relative MSE, and the repeated-play
// running-cost statistic for matrix games.

#include <cstddef>
#include <string>

#include "eqnet/games.hpp"
#include "eqnet/model.hpp"

namespace eqnet {

struct TrafixParams {
  double eps = 5e-3;  // relative-error threshold
  double tau = 1e-3;  // denominator tolerance
};

// 100 * (#entries with |x_i - x_star_i| / (|x_star_i| + tau) < eps) / n.
double trafix(const Vec& x, const Vec& x_star, const TrafixParams& p = {});

// ||x - x_star||^2 / ||x_star||^2; zero reference is a domain error.
double rel_mse(const Vec& x, const Vec& x_star);

enum class OpponentPolicy { Optimal, Nfpn, Uniform };

struct PlayTrace {
  std::size_t k_max = 0;
  Vec y;            // y[k-1]: mean over contexts of |running average cost|
  Vec signed_mean;  // same average without the absolute value
  std::string policy_label;
};

// Repeated one-shot play over freshly sampled contexts. Player 2 mixes per
// `policy2` (the trained operator's prediction for Nfpn). Player 1 plays the
// entropy-softened best response to player 2's mixed strategy, which at an
// optimal opponent coincides with the equilibrium strategy. Both actions are
// drawn one-hot per game; the realized cost is the payoff entry (the entropy
// term vanishes on one-hot play).
PlayTrace simulate_play(const MatrixGameSpec& g, const OperatorModel* model,
                        OpponentPolicy policy2, std::size_t n_games, std::size_t n_contexts,
                        RngStream& rng);

}  // namespace eqnet
