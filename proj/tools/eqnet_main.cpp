// Command-line front end: dataset generation, training, evaluation, and
// repeated-play simulation. Every subcommand echoes its fully resolved
// configuration before doing work, so a run log doubles as a reproduction
// recipe. Exit codes: 0 success, 1 numerical failure, 2 user/config error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <exception>
#include <string>
#include <variant>
#include <vector>

#include "eqnet/data.hpp"
#include "eqnet/games.hpp"
#include "eqnet/metrics.hpp"
#include "eqnet/model.hpp"
#include "eqnet/solvers.hpp"

namespace {

using namespace eqnet;

double now_seconds() {
  using clock = std::chrono::steady_clock;
  static const clock::time_point start = clock::now();
  return std::chrono::duration<double>(clock::now() - start).count();
}

void echo(const char* key, const std::string& value) {
  std::printf("  %s = %s\n", key, value.c_str());
}
void echo(const char* key, double value) { std::printf("  %s = %.12g\n", key, value); }
void echo(const char* key, std::size_t value) { std::printf("  %s = %zu\n", key, value); }
void echo(const char* key, bool value) { std::printf("  %s = %s\n", key, value ? "true" : "false"); }

FILE* open_or_throw(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw FormatError("cannot open " + path + " for writing");
  return f;
}

struct GenerateArgs {
  std::string game = "braess";
  std::string out;
  std::string net_path;
  std::string trips_path;
  std::size_t actions = 5;
  std::size_t context_dim = 10;
  double eps_cap = 0.3;
  double bpr_coeff = 0.5;
  std::size_t n = 0;
  std::size_t n_test = SIZE_MAX;
  std::uint64_t seed = 1;
  double alpha = 0.0;
  double tol = 0.0;
  std::size_t max_iters = 100000;
  std::size_t cert_probes = 100;
  bool no_blocks = false;
  bool serial = false;
  bool alpha_set = false;
  bool tol_set = false;
};

int cmd_generate(const GenerateArgs& a) {
  GameDefinition def;
  if (a.game == "braess") {
    def = make_braess_game(a.seed);
  } else if (a.game == "matrix") {
    def = make_contextual_matrix_game(a.actions, a.seed);
  } else if (a.game == "tntp") {
    if (a.net_path.empty() || a.trips_path.empty()) {
      throw ConfigError("--game tntp requires --net and --trips");
    }
    TntpNetwork tn = parse_tntp_net(a.net_path);
    TntpTrips tr = parse_tntp_trips(a.trips_path);
    NetworkBuildOptions bo;
    bo.context_dim = a.context_dim;
    bo.eps_cap = a.eps_cap;
    bo.bpr_coeff = a.bpr_coeff;
    bo.seed = a.seed;
    def = make_traffic_game(build_network(tn, tr, bo));
  } else {
    throw ConfigError("unknown game kind '" + a.game + "' (braess, matrix, tntp)");
  }

  GenerateOptions opt;
  opt.n_samples = a.n;
  opt.n_test = a.n_test;
  opt.seed = a.seed;
  opt.max_iters = a.max_iters;
  opt.cert_probes = a.cert_probes;
  opt.keep_blocks = !a.no_blocks;
  opt.policy = a.serial ? ExecPolicy::Serial : ExecPolicy::OpenMP;
  recommended_generation_config(def, opt);
  if (a.alpha_set) opt.alpha = a.alpha;
  if (a.tol_set) opt.tol = a.tol;

  std::printf("generate configuration:\n");
  echo("game", a.game);
  if (a.game == "matrix") echo("actions", a.actions);
  if (a.game == "tntp") {
    echo("net", a.net_path);
    echo("trips", a.trips_path);
    echo("context_dim", a.context_dim);
    echo("eps_cap", a.eps_cap);
    echo("bpr_coeff", a.bpr_coeff);
  }
  echo("n", opt.n_samples);
  echo("n_test", opt.n_test == SIZE_MAX ? opt.n_samples / 11 : opt.n_test);
  echo("seed", opt.seed);
  echo("alpha", opt.alpha);
  echo("tol", opt.tol);
  echo("max_iters", opt.max_iters);
  echo("cert_probes", opt.cert_probes);
  echo("store_blocks", opt.keep_blocks);
  echo("policy", std::string(a.serial ? "serial" : "openmp"));
  echo("out", a.out);
  std::fflush(stdout);

  const double t0 = now_seconds();
  EquilibriumDataset ds = generate_dataset(def, opt);
  write_dataset(ds, def, a.out);
  std::printf("generate: %zu train + %zu test samples -> %s (%.1f s)\n", ds.train_idx.size(),
              ds.test_idx.size(), a.out.c_str(), now_seconds() - t0);
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string out = "model.bin";
  std::string history = "history.csv";
  std::size_t epochs = 200;
  std::size_t batch = 500;
  double lr = 1e-3;
  double alpha = 1.0;
  double tol = 1e-4;
  std::size_t max_depth = 50;
  std::size_t hidden = 100;
  std::size_t layers = 1;
  bool flow_input = false;
  std::uint64_t seed = 1;
  bool serial = false;
};

int cmd_train(const TrainArgs& a) {
  LoadedDataset loaded = read_dataset(a.data);
  for (const std::string& w : loaded.ds.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  const bool matrix = std::holds_alternative<MatrixGameSpec>(loaded.def.game);

  std::printf("train configuration:\n");
  echo("data", a.data);
  echo("arch", std::string(matrix ? "matrix-game net" : "traffic net"));
  echo("context_dim", loaded.ds.context_dim);
  echo("action_dim", loaded.ds.action_dim);
  if (!matrix) {
    echo("hidden", a.hidden);
    echo("layers", a.layers);
    echo("flow_input", a.flow_input);
  }
  echo("epochs", a.epochs);
  echo("batch", a.batch);
  echo("lr", a.lr);
  echo("alpha", a.alpha);
  echo("tol", a.tol);
  echo("max_depth", a.max_depth);
  echo("seed", a.seed);
  echo("policy", std::string(a.serial ? "serial" : "openmp"));
  echo("out", a.out);
  echo("history", a.history);

  OperatorModel m = matrix ? make_matrix_game_net(loaded.ds.action_dim, loaded.ds.context_dim)
                           : make_traffic_net(loaded.ds.action_dim, loaded.ds.context_dim,
                                              a.hidden, a.layers, a.flow_input);
  RngStream init_rng(a.seed, "model_init");
  init_weights(m, init_rng);
  std::printf("parameters: %zu\n", param_count(m));

  SolverConfig cfg;
  cfg.alpha = a.alpha;
  cfg.tol = a.tol;
  cfg.max_depth = a.max_depth;
  AdamState adam = make_adam(m, a.lr);
  auto [trained, history] =
      train(std::move(m), loaded.ds, loaded.def.constraint, cfg, std::move(adam), a.epochs,
            a.batch, a.seed, a.serial ? ExecPolicy::Serial : ExecPolicy::OpenMP);

  save_model(trained, a.out);
  FILE* hf = open_or_throw(a.history);
  std::fprintf(hf, "epoch,train_loss,test_rel_mse,test_trafix,seconds\n");
  for (const EpochRecord& r : history) {
    std::fprintf(hf, "%zu,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.test_rel_mse,
                 r.test_trafix, r.seconds);
  }
  std::fclose(hf);
  if (!history.empty()) {
    const EpochRecord& last = history.back();
    std::printf("train: final train_loss %.6g, test rel_mse %.6g, test trafix %.2f%%\n",
                last.train_loss, last.test_rel_mse, last.test_trafix);
  }
  std::printf("train: model -> %s, history -> %s\n", a.out.c_str(), a.history.c_str());
  return 0;
}

struct EvalArgs {
  std::string model;
  std::string data;
  std::string out = "eval.csv";
  double alpha = 1.0;
  double tol = 1e-4;
  std::size_t max_depth = 50;
};

int cmd_eval(const EvalArgs& a) {
  OperatorModel m = load_model(a.model);
  LoadedDataset loaded = read_dataset(a.data);
  for (const std::string& w : loaded.ds.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  if (m.dims.context_dim != loaded.ds.context_dim || m.dims.action_dim != loaded.ds.action_dim) {
    throw ConfigError("model dims (" + std::to_string(m.dims.context_dim) + ", " +
                      std::to_string(m.dims.action_dim) + ") do not match the dataset (" +
                      std::to_string(loaded.ds.context_dim) + ", " +
                      std::to_string(loaded.ds.action_dim) + ")");
  }

  std::printf("eval configuration:\n");
  echo("model", a.model);
  echo("data", a.data);
  echo("test_samples", loaded.ds.test_idx.size());
  echo("alpha", a.alpha);
  echo("tol", a.tol);
  echo("max_depth", a.max_depth);
  echo("out", a.out);

  SolverConfig cfg;
  cfg.alpha = a.alpha;
  cfg.tol = a.tol;
  cfg.max_depth = a.max_depth;

  FILE* f = open_or_throw(a.out);
  std::fprintf(f, "sample,rel_mse,trafix\n");
  double sum_mse = 0.0, sum_trafix = 0.0;
  for (std::size_t idx : loaded.ds.test_idx) {
    const SampleRecord& rec = loaded.ds.samples[idx];
    SolveTrace t = nfpn_predict(m, loaded.def.constraint, rec.d, cfg);
    const double mse = rel_mse(t.solution, rec.x_star);
    const double tfx = trafix(t.solution, rec.x_star);
    sum_mse += mse;
    sum_trafix += tfx;
    std::fprintf(f, "%zu,%.17g,%.17g\n", idx, mse, tfx);
  }
  const double n = static_cast<double>(loaded.ds.test_idx.size());
  const double mean_mse = n > 0 ? sum_mse / n : 0.0;
  const double mean_trafix = n > 0 ? sum_trafix / n : 0.0;
  std::fprintf(f, "mean,%.17g,%.17g\n", mean_mse, mean_trafix);
  std::fclose(f);
  std::printf("eval: %zu samples, mean rel_mse %.6g, mean trafix %.2f%% -> %s\n",
              loaded.ds.test_idx.size(), mean_mse, mean_trafix, a.out.c_str());
  return 0;
}

struct SimulateArgs {
  std::string model;
  std::string out = "play.csv";
  std::size_t actions = 3;
  std::uint64_t game_seed = 1;
  std::size_t n_games = 1000;
  std::size_t n_contexts = 100;
  std::uint64_t seed = 1;
};

int cmd_simulate(const SimulateArgs& a) {
  OperatorModel m = load_model(a.model);
  GameDefinition def = make_contextual_matrix_game(a.actions, a.game_seed);
  const auto& g = std::get<MatrixGameSpec>(def.game);
  // The predictor acts on both players' stacked strategies.
  if (m.dims.context_dim != g.context_dim || m.dims.action_dim != 2 * g.actions) {
    throw ConfigError("model dims (" + std::to_string(m.dims.context_dim) + ", " +
                      std::to_string(m.dims.action_dim) + ") do not match a " +
                      std::to_string(g.actions) + "-action game with context dimension " +
                      std::to_string(g.context_dim) + " (state dimension " +
                      std::to_string(2 * g.actions) + ")");
  }

  std::printf("simulate configuration:\n");
  echo("model", a.model);
  echo("actions", a.actions);
  echo("game_seed", a.game_seed);
  echo("n_games", a.n_games);
  echo("n_contexts", a.n_contexts);
  echo("seed", a.seed);
  echo("out", a.out);

  // The three policies share one seeded stream id, so they face the same
  // draw sequence (common random numbers) and the columns are comparable.
  auto run = [&](const OperatorModel* model, OpponentPolicy p) {
    RngStream rng(a.seed, "play");
    return simulate_play(g, model, p, a.n_games, a.n_contexts, rng);
  };
  PlayTrace opt = run(nullptr, OpponentPolicy::Optimal);
  PlayTrace nfpn = run(&m, OpponentPolicy::Nfpn);
  PlayTrace unif = run(nullptr, OpponentPolicy::Uniform);

  FILE* f = open_or_throw(a.out);
  std::fprintf(f, "k,y_optimal,y_nfpn,y_uniform\n");
  for (std::size_t k = 0; k < a.n_games; ++k) {
    std::fprintf(f, "%zu,%.17g,%.17g,%.17g\n", k + 1, opt.y[k], nfpn.y[k], unif.y[k]);
  }
  std::fclose(f);
  std::printf("simulate: y at k=%zu: optimal %.4f, trained %.4f, uniform %.4f -> %s\n", a.n_games,
              opt.y.back(), nfpn.y.back(), unif.y.back(), a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"equilibrium-network toolkit: generate datasets, train and evaluate the fixed-point predictor, simulate repeated play"};
  app.require_subcommand(1);
  app.set_config("--config", "", "read option defaults from an INI file");

  GenerateArgs ga;
  CLI::App* gen = app.add_subcommand("generate", "solve a contextual game repeatedly and write a dataset");
  gen->add_option("--game", ga.game, "game kind: braess, matrix, tntp")->capture_default_str();
  gen->add_option("--n", ga.n, "total sample count")->required();
  gen->add_option("--n-test", ga.n_test, "test samples (default: n/11)");
  gen->add_option("--seed", ga.seed, "seed for game build and sampling")->capture_default_str();
  gen->add_option("--out", ga.out, "output directory")->required();
  gen->add_option("--a", ga.actions, "matrix game: actions per player")->capture_default_str();
  gen->add_option("--net", ga.net_path, "tntp: network file");
  gen->add_option("--trips", ga.trips_path, "tntp: trips file");
  gen->add_option("--context-dim", ga.context_dim, "tntp: context dimension")->capture_default_str();
  gen->add_option("--eps-cap", ga.eps_cap, "tntp: capacity modulation amplitude")->capture_default_str();
  gen->add_option("--bpr-coeff", ga.bpr_coeff, "tntp: congestion coefficient")->capture_default_str();
  auto* ga_alpha = gen->add_option("--alpha", ga.alpha, "solver step size (default: per-game recommendation)");
  auto* ga_tol = gen->add_option("--tol", ga.tol, "solver tolerance (default: per-game recommendation)");
  gen->add_option("--max-iters", ga.max_iters, "solver iteration cap")->capture_default_str();
  gen->add_option("--cert-probes", ga.cert_probes, "feasible probes per sample, 0 disables")->capture_default_str();
  gen->add_flag("--no-blocks", ga.no_blocks, "drop per-route flows from the output");
  gen->add_flag("--serial", ga.serial, "disable the parallel sample loop");

  TrainArgs ta;
  CLI::App* tr = app.add_subcommand("train", "fit the operator on a generated dataset");
  tr->add_option("--data", ta.data, "dataset directory")->required();
  tr->add_option("--out", ta.out, "model output path")->capture_default_str();
  tr->add_option("--history", ta.history, "per-epoch metrics CSV")->capture_default_str();
  tr->add_option("--epochs", ta.epochs, "training epochs")->capture_default_str();
  tr->add_option("--batch", ta.batch, "minibatch size")->capture_default_str();
  tr->add_option("--lr", ta.lr, "Adam learning rate")->capture_default_str();
  tr->add_option("--alpha", ta.alpha, "fixed-point step size")->capture_default_str();
  tr->add_option("--tol", ta.tol, "fixed-point stopping tolerance")->capture_default_str();
  tr->add_option("--max-depth", ta.max_depth, "fixed-point iteration cap")->capture_default_str();
  tr->add_option("--hidden", ta.hidden, "traffic net: latent width")->capture_default_str();
  tr->add_option("--layers", ta.layers, "traffic net: hidden-to-hidden layers")->capture_default_str();
  tr->add_flag("--flow-input", ta.flow_input, "traffic net: feed the flow state to the network");
  tr->add_option("--seed", ta.seed, "weight init and shuffling seed")->capture_default_str();
  tr->add_flag("--serial", ta.serial, "disable the parallel batch loop");

  EvalArgs ea;
  CLI::App* ev = app.add_subcommand("eval", "score a trained model on a dataset's test split");
  ev->add_option("--model", ea.model, "model file")->required();
  ev->add_option("--data", ea.data, "dataset directory")->required();
  ev->add_option("--out", ea.out, "per-sample metrics CSV")->capture_default_str();
  ev->add_option("--alpha", ea.alpha, "fixed-point step size")->capture_default_str();
  ev->add_option("--tol", ea.tol, "fixed-point stopping tolerance")->capture_default_str();
  ev->add_option("--max-depth", ea.max_depth, "fixed-point iteration cap")->capture_default_str();

  SimulateArgs sa;
  CLI::App* si = app.add_subcommand("simulate", "repeated matrix-game play against three opponent policies");
  si->add_option("--model", sa.model, "model file")->required();
  si->add_option("--out", sa.out, "running-cost CSV")->capture_default_str();
  si->add_option("--a", sa.actions, "actions per player")->capture_default_str();
  si->add_option("--game-seed", sa.game_seed, "seed the payoff map is drawn from")->capture_default_str();
  si->add_option("--games", sa.n_games, "plays per context")->capture_default_str();
  si->add_option("--contexts", sa.n_contexts, "contexts averaged per step")->capture_default_str();
  si->add_option("--seed", sa.seed, "simulation seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    ga.alpha_set = ga_alpha->count() > 0;
    ga.tol_set = ga_tol->count() > 0;
    if (gen->parsed()) return cmd_generate(ga);
    if (tr->parsed()) return cmd_train(ta);
    if (ev->parsed()) return cmd_eval(ea);
    return cmd_simulate(sa);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    if (dynamic_cast<const std::invalid_argument*>(&e) != nullptr ||
        dynamic_cast<const FormatError*>(&e) != nullptr) {
      return 2;
    }
    return 1;
  }
}
