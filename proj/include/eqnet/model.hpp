#pragma once

// The learned equilibrium operator: two small fully connected architectures,
// hand-rolled forward/backward passes, the one-step training gradient, Adam,
// the training loop, and a versioned binary model container.

#include <cstdint>
#include <utility>
#include <vector>

#include "eqnet/constraints.hpp"
#include "eqnet/dataset.hpp"
#include "eqnet/numerics.hpp"
#include "eqnet/parallel.hpp"
#include "eqnet/solvers.hpp"

namespace eqnet {

enum class ModelArch : std::uint8_t { MatrixGameNet = 0, TrafficNet = 1 };

struct ModelDims {
  std::size_t context_dim = 0;
  std::size_t action_dim = 0;  // state dimension the operator acts on
  std::size_t hidden_dim = 0;  // latent width (TrafficNet)
  std::size_t n_hidden = 0;    // hidden-to-hidden layer count (TrafficNet)
};

struct OperatorModel {
  ModelArch arch = ModelArch::MatrixGameNet;
  ModelDims dims;
  bool use_flow_input = false;  // TrafficNet: concatenate x to d at the input
  std::vector<Matrix> w;
  std::vector<Vec> b;  // empty for MatrixGameNet (bias-free by construction)
};

// MatrixGameNet: F(x; d) = x + W2(x + relu(W1 d)), no biases.
// W1: action_dim x context_dim, W2: action_dim x action_dim. Zero weights.
OperatorModel make_matrix_game_net(std::size_t action_dim, std::size_t context_dim);

// TrafficNet: biased MLP with ReLU hidden activations,
//   input -> hidden_dim -> (hidden_dim)^n_hidden -> action_dim,
// input being d alone or (x, d) concatenated. Zero weights.
OperatorModel make_traffic_net(std::size_t action_dim, std::size_t context_dim,
                               std::size_t hidden_dim = 100, std::size_t n_hidden = 1,
                               bool use_flow_input = false);

// Uniform in +-1/sqrt(fan_in), layer by layer, row-major, biases zero.
void init_weights(OperatorModel& m, RngStream& rng);

std::size_t param_count(const OperatorModel& m);

struct ForwardCache {
  ModelArch arch = ModelArch::MatrixGameNet;
  ModelDims dims;
  bool use_flow_input = false;
  Vec x, d;
  Vec input;              // layer-0 input actually fed to the chain
  std::vector<Vec> pre;   // pre-activation per layer
  std::vector<Vec> post;  // post-activation per layer (last = raw output chain)
};

// Evaluates F_theta(x; d); fills cache for a later backward pass if given.
Vec model_forward(const OperatorModel& m, const Vec& x, const Vec& d,
                  ForwardCache* cache = nullptr);

// Gradient arrays shaped like a model's weights.
struct GradientSet {
  std::vector<Matrix> w;
  std::vector<Vec> b;
};
GradientSet zero_gradients(const OperatorModel& m);
void gradient_axpy(GradientSet& acc, double a, const GradientSet& g);
void gradient_scale(GradientSet& g, double a);
double gradient_max_abs(const GradientSet& g);

struct BackwardResult {
  GradientSet grads;
  Vec grad_x;
};

// Exact reverse-mode gradients of <upstream, F_theta(x; d)>.
BackwardResult model_backward(const OperatorModel& m, const ForwardCache& cache,
                              const Vec& upstream);

// Solver adapter. For context-only TrafficNet the network value is computed
// once per distinct d and replayed, so a fixed-point solve pays one forward
// pass. The returned callable carries that mutable cache: share it across
// concurrent solves only if every solve uses the same d.
OperatorFn nfpn_operator(const OperatorModel& m);

// Fixed-point prediction for one context (zeros init, no gradient tracking).
SolveTrace nfpn_predict(const OperatorModel& m, const ConstraintSpec& spec, const Vec& d,
                        const SolverConfig& cfg);

// One-step training gradient: re-applies the step operator once to the
// converged state in `solved`, maps it to the output (projection, block sum,
// or first block by constraint kind), forms the mean squared error against
// `target`, and backpropagates through that single application only, treating
// the incoming state as constant.
GradientSet jfb_gradient(const OperatorModel& m, const SolveTrace& solved, const Vec& d,
                         const Vec& target, const ConstraintSpec& spec, double alpha,
                         double* loss_out = nullptr, Vec* output_out = nullptr);

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  GradientSet m1, m2;
};
AdamState make_adam(const OperatorModel& m, double lr = 1e-3);
// Standard bias-corrected update, in place.
void adam_step(AdamState& s, OperatorModel& m, const GradientSet& g);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double test_rel_mse = 0.0;
  double test_trafix = 0.0;
  double seconds = 0.0;
};
using TrainHistory = std::vector<EpochRecord>;

// Minibatch training: per sample an untracked fixed-point solve followed by
// the one-step gradient; per batch an Adam step on the averaged gradient.
// History carries test-split metrics per epoch. Deterministic for a fixed
// seed under either execution policy.
std::pair<OperatorModel, TrainHistory> train(OperatorModel m, const EquilibriumDataset& ds,
                                             const ConstraintSpec& game_constraints,
                                             const SolverConfig& solver, AdamState opt,
                                             std::size_t epochs, std::size_t batch,
                                             std::uint64_t seed,
                                             ExecPolicy policy = ExecPolicy::OpenMP);

// Versioned little-endian binary container; round trip is bit-exact.
void save_model(const OperatorModel& m, const std::string& path);
OperatorModel load_model(const std::string& path);

}  // namespace eqnet
