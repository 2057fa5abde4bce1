#pragma once

// Road-network text formats (TNTP), ground-truth dataset generation, and the
// on-disk dataset layout (CSV tables plus a metadata sidecar).

#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "eqnet/dataset.hpp"
#include "eqnet/games.hpp"
#include "eqnet/parallel.hpp"

namespace eqnet {

struct TntpArc {
  std::size_t init_node = 0;  // 1-based, as printed in the file
  std::size_t term_node = 0;
  double capacity = 0.0;
  double length = 0.0;
  double free_flow_time = 0.0;
  double b = 0.0;
  double power = 0.0;
  double speed = 0.0;
  double toll = 0.0;
  int link_type = 0;
};

struct TntpNetwork {
  std::size_t n_nodes = 0;
  std::size_t n_links = 0;
  std::size_t first_thru_node = 1;
  std::vector<TntpArc> arcs;
};

struct TntpTrips {
  std::size_t n_zones = 0;
  double total_flow = 0.0;
  // (origin, destination, flow), 1-based node ids, zero-flow entries dropped
  std::vector<std::tuple<std::size_t, std::size_t, double>> entries;
};

// Both parsers throw FormatError naming the missing metadata tag or the
// offending line number. The arc count must match <NUMBER OF LINKS>, and the
// summed trip flow must match <TOTAL OD FLOW> to 1e-6 relative.
TntpNetwork parse_tntp_net(const std::string& path);
TntpTrips parse_tntp_trips(const std::string& path);

struct NetworkBuildOptions {
  std::size_t context_dim = 10;
  double eps_cap = 0.3;
  double bpr_coeff = 0.5;
  std::uint64_t seed = 0;  // drives the capacity mixing map
};

// Incidence with -1 at the arc tail and +1 at the head, one demand pair per
// trip entry, and a capacity mixing map drawn by sample_context_matrix.
RoadNetwork build_network(const TntpNetwork& net, const TntpTrips& trips,
                          const NetworkBuildOptions& opt);

// Fully assembled generation targets. The payoff / capacity mixing map is
// drawn once from the seed and travels with the dataset metadata.
GameDefinition make_contextual_matrix_game(std::size_t actions, std::uint64_t seed);
GameDefinition make_braess_game(std::uint64_t seed);

struct GenerateOptions {
  std::size_t n_samples = 0;  // total; the trailing n_test samples become test data
  std::size_t n_test = SIZE_MAX;  // SIZE_MAX: n_samples / 11
  double alpha = 0.02;
  double tol = 1e-10;
  std::size_t max_iters = 100000;
  std::uint64_t seed = 1;
  std::size_t cert_probes = 100;  // feasible probes per sample, 0 disables
  ExecPolicy policy = ExecPolicy::OpenMP;
  // Per-block flows of sum-constrained games are checked either way; false
  // drops them after the check so big datasets stay at CSV scale on disk.
  bool keep_blocks = true;
};

// Step size and stopping tolerance that converge for the given game: the
// small step required by the congestion quartic for traffic games, the
// entropy-friendly step for matrix games, and a tolerance scaled by total
// demand so the stopping test stays above rounding noise on large networks.
void recommended_generation_config(const GameDefinition& def, GenerateOptions& opt);

// Solves the ground-truth VI once per context. A sample that fails to
// converge within the iteration cap aborts generation with a DomainError
// naming the sample and its context. Sample i depends only on (seed, i).
EquilibriumDataset generate_dataset(const GameDefinition& def, const GenerateOptions& opt);

// Directory layout: train.csv / test.csv with header d_1..d_m,x_1..x_n and
// 17-significant-digit values, meta.json with the full game and provenance,
// and blocks.bin with per-block flows when the samples carry them (recorded
// as has_blocks in the metadata). Round trips are bit-exact. The splits must
// be the contiguous train-then-test ranges produced by generate_dataset.
void write_dataset(const EquilibriumDataset& ds, const GameDefinition& def,
                   const std::string& dir);

struct LoadedDataset {
  EquilibriumDataset ds;
  GameDefinition def;
};

// Rebuilds the game from the metadata sidecar. A digest mismatch between
// metadata and data files is recorded in ds.warnings and the load proceeds;
// structural problems (missing files, header or column mismatches) throw
// FormatError.
LoadedDataset read_dataset(const std::string& dir);

}  // namespace eqnet
