#pragma once

// In-memory equilibrium dataset shared by training, evaluation, and file I/O.

#include <cstdint>
#include <string>
#include <vector>

#include "eqnet/common.hpp"

namespace eqnet {

struct SampleRecord {
  Vec d;
  Vec x_star;
  // Worst normalized violation of the equilibrium inequality observed over
  // the feasible probes drawn at generation time; 0 when none.
  double cert_residual = 0.0;
  // Per-block flow decomposition for sum-constrained games, flattened
  // K x action_dim row-major; empty otherwise. The blocks sum to x_star and
  // each satisfies its own flow-conservation system.
  Vec block_flows;
};

struct DatasetProvenance {
  std::uint64_t seed = 0;
  std::string game_digest;  // hash of the stored game parameters
  double solver_tol = 0.0;
  double solver_alpha = 0.0;
};

struct EquilibriumDataset {
  std::size_t context_dim = 0;
  std::size_t action_dim = 0;
  std::vector<SampleRecord> samples;
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_idx;
  DatasetProvenance provenance;
  // Populated by loaders (digest mismatches and the like); never serialized.
  std::vector<std::string> warnings;
};

}  // namespace eqnet
