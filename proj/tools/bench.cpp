// Times the threaded execution path against the serial reference on the two
// hot loops (dataset generation, training) and verifies that both produce
// identical bits. Exits nonzero on any mismatch.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <utility>

#include "eqnet/data.hpp"
#include "eqnet/model.hpp"

namespace {

using namespace eqnet;

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

bool same_bits(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compare the serial and threaded execution paths"};
  std::size_t n_samples = 200;
  std::size_t epochs = 5;
  app.add_option("--samples", n_samples, "generation workload size")->capture_default_str();
  app.add_option("--epochs", epochs, "training workload size")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  bool ok = true;

  GameDefinition def = make_braess_game(11);
  GenerateOptions opt;
  opt.n_samples = n_samples;
  opt.seed = 11;
  recommended_generation_config(def, opt);

  opt.policy = ExecPolicy::Serial;
  double t0 = now_seconds();
  EquilibriumDataset serial_ds = generate_dataset(def, opt);
  const double gen_serial = now_seconds() - t0;

  opt.policy = ExecPolicy::OpenMP;
  t0 = now_seconds();
  EquilibriumDataset omp_ds = generate_dataset(def, opt);
  const double gen_omp = now_seconds() - t0;

  for (std::size_t i = 0; i < serial_ds.samples.size(); ++i) {
    if (!same_bits(serial_ds.samples[i].x_star, omp_ds.samples[i].x_star)) {
      std::printf("MISMATCH: generated sample %zu differs between policies\n", i);
      ok = false;
      break;
    }
  }
  std::printf("generate  %4zu samples   serial %7.2f s   threaded %7.2f s   speedup %.2fx\n",
              n_samples, gen_serial, gen_omp, gen_serial / gen_omp);

  auto run_train = [&](ExecPolicy policy, double& seconds) {
    OperatorModel m = make_traffic_net(serial_ds.action_dim, serial_ds.context_dim, 32, 1, false);
    RngStream rng(11, "model_init");
    init_weights(m, rng);
    AdamState adam = make_adam(m, 1e-3);
    const double start = now_seconds();
    auto [trained, history] = train(std::move(m), serial_ds, def.constraint, SolverConfig{},
                                    std::move(adam), epochs, 100, 11, policy);
    seconds = now_seconds() - start;
    return trained;
  };

  double train_serial = 0.0, train_omp = 0.0;
  OperatorModel ms = run_train(ExecPolicy::Serial, train_serial);
  OperatorModel mo = run_train(ExecPolicy::OpenMP, train_omp);
  for (std::size_t l = 0; l < ms.w.size(); ++l) {
    if (!same_bits(ms.w[l].a, mo.w[l].a)) {
      std::printf("MISMATCH: trained weights, layer %zu\n", l);
      ok = false;
    }
  }
  for (std::size_t l = 0; l < ms.b.size(); ++l) {
    if (!same_bits(ms.b[l], mo.b[l])) {
      std::printf("MISMATCH: trained biases, layer %zu\n", l);
      ok = false;
    }
  }
  std::printf("train     %4zu epochs    serial %7.2f s   threaded %7.2f s   speedup %.2fx\n",
              epochs, train_serial, train_omp, train_serial / train_omp);

  if (ok) std::printf("policies agree bitwise\n");
  return ok ? 0 : 1;
}
