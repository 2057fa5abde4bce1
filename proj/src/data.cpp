#include "eqnet/data.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include <json.hpp>

namespace eqnet {

namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

struct MetadataHeader {
  std::vector<std::pair<std::string, std::string>> tags;
  std::size_t lines_consumed = 0;

  const std::string* find(const std::string& name) const {
    for (const auto& [k, v] : tags) {
      if (k == name) return &v;
    }
    return nullptr;
  }
  std::string require(const std::string& name, const std::string& path) const {
    const std::string* v = find(name);
    if (!v) throw FormatError(path + ": missing metadata tag <" + name + ">");
    return *v;
  }
};

// Reads the angle-bracket header block, up to and including <END OF METADATA>.
MetadataHeader read_metadata(std::istream& in, const std::string& path) {
  MetadataHeader md;
  std::string line;
  while (std::getline(in, line)) {
    ++md.lines_consumed;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '~') continue;
    if (t[0] != '<') {
      throw FormatError(path + " line " + std::to_string(md.lines_consumed) +
                        ": expected a metadata tag before <END OF METADATA>");
    }
    const std::size_t close = t.find('>');
    if (close == std::string::npos) {
      throw FormatError(path + " line " + std::to_string(md.lines_consumed) +
                        ": unterminated metadata tag");
    }
    const std::string name = t.substr(1, close - 1);
    if (name == "END OF METADATA") return md;
    md.tags.emplace_back(name, trim(t.substr(close + 1)));
  }
  throw FormatError(path + ": missing metadata tag <END OF METADATA>");
}

std::size_t parse_count(const std::string& text, const std::string& what,
                        const std::string& path) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(text, &pos);
    if (v < 0 || trim(text.substr(pos)) != "") throw std::invalid_argument("");
    return static_cast<std::size_t>(v);
  } catch (...) {
    throw FormatError(path + ": metadata tag <" + what + "> is not a count: '" + text + "'");
  }
}

double parse_real(const std::string& text, const std::string& what, const std::string& path) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(text, &pos);
    if (trim(text.substr(pos)) != "") throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw FormatError(path + ": metadata tag <" + what + "> is not a number: '" + text + "'");
  }
}

}  // namespace

TntpNetwork parse_tntp_net(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  MetadataHeader md = read_metadata(in, path);

  TntpNetwork net;
  net.n_nodes = parse_count(md.require("NUMBER OF NODES", path), "NUMBER OF NODES", path);
  net.n_links = parse_count(md.require("NUMBER OF LINKS", path), "NUMBER OF LINKS", path);
  if (const std::string* v = md.find("FIRST THRU NODE")) {
    net.first_thru_node = parse_count(*v, "FIRST THRU NODE", path);
  }

  std::string line;
  std::size_t line_no = md.lines_consumed;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '~') continue;
    const std::size_t semi = t.find(';');
    if (semi == std::string::npos) {
      throw FormatError(path + " line " + std::to_string(line_no) +
                        ": arc row is not terminated by ';'");
    }
    if (trim(t.substr(semi + 1)) != "") {
      throw FormatError(path + " line " + std::to_string(line_no) +
                        ": trailing content after ';'");
    }
    std::istringstream row(t.substr(0, semi));
    TntpArc arc;
    long long init = 0, term = 0;
    if (!(row >> init >> term >> arc.capacity >> arc.length >> arc.free_flow_time >> arc.b >>
          arc.power >> arc.speed >> arc.toll >> arc.link_type)) {
      throw FormatError(path + " line " + std::to_string(line_no) + ": malformed arc row");
    }
    std::string extra;
    if (row >> extra) {
      throw FormatError(path + " line " + std::to_string(line_no) +
                        ": unexpected extra field '" + extra + "'");
    }
    if (init < 1 || term < 1 || static_cast<std::size_t>(init) > net.n_nodes ||
        static_cast<std::size_t>(term) > net.n_nodes) {
      throw FormatError(path + " line " + std::to_string(line_no) +
                        ": node id outside the declared node count");
    }
    if (!(arc.capacity > 0.0)) {
      throw FormatError(path + " line " + std::to_string(line_no) + ": capacity must be positive");
    }
    if (arc.free_flow_time < 0.0) {
      throw FormatError(path + " line " + std::to_string(line_no) +
                        ": negative free-flow time");
    }
    arc.init_node = static_cast<std::size_t>(init);
    arc.term_node = static_cast<std::size_t>(term);
    net.arcs.push_back(arc);
  }
  if (net.arcs.size() != net.n_links) {
    throw FormatError(path + ": <NUMBER OF LINKS> says " + std::to_string(net.n_links) +
                      " but " + std::to_string(net.arcs.size()) + " arc rows were parsed");
  }
  return net;
}

TntpTrips parse_tntp_trips(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  MetadataHeader md = read_metadata(in, path);

  TntpTrips trips;
  trips.n_zones = parse_count(md.require("NUMBER OF ZONES", path), "NUMBER OF ZONES", path);
  trips.total_flow = parse_real(md.require("TOTAL OD FLOW", path), "TOTAL OD FLOW", path);

  std::string line;
  std::size_t line_no = md.lines_consumed;
  std::size_t origin = 0;  // 0: none declared yet
  double parsed_total = 0.0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '~') continue;
    if (t.rfind("Origin", 0) == 0) {
      std::istringstream os(t.substr(6));
      long long o = 0;
      std::string extra;
      if (!(os >> o) || (os >> extra) || o < 1) {
        throw FormatError(path + " line " + std::to_string(line_no) + ": malformed Origin line");
      }
      if (static_cast<std::size_t>(o) > trips.n_zones) {
        throw FormatError(path + " line " + std::to_string(line_no) + ": origin zone " +
                          std::to_string(o) + " exceeds <NUMBER OF ZONES>");
      }
      origin = static_cast<std::size_t>(o);
      continue;
    }
    if (origin == 0) {
      throw FormatError(path + " line " + std::to_string(line_no) +
                        ": demand entry before any Origin line");
    }
    // one or more "dest : flow;" entries per line
    std::size_t pos = 0;
    while (pos < t.size()) {
      const std::size_t semi = t.find(';', pos);
      if (semi == std::string::npos) {
        if (trim(t.substr(pos)) == "") break;
        throw FormatError(path + " line " + std::to_string(line_no) +
                          ": demand entry is not terminated by ';'");
      }
      const std::string chunk = trim(t.substr(pos, semi - pos));
      pos = semi + 1;
      if (chunk.empty()) continue;
      const std::size_t colon = chunk.find(':');
      if (colon == std::string::npos) {
        throw FormatError(path + " line " + std::to_string(line_no) +
                          ": expected 'destination : flow' in '" + chunk + "'");
      }
      long long dest = 0;
      double flow = 0.0;
      try {
        std::size_t used = 0;
        const std::string dstr = trim(chunk.substr(0, colon));
        dest = std::stoll(dstr, &used);
        if (used != dstr.size()) throw std::invalid_argument("");
        const std::string fstr = trim(chunk.substr(colon + 1));
        flow = std::stod(fstr, &used);
        if (used != fstr.size()) throw std::invalid_argument("");
      } catch (...) {
        throw FormatError(path + " line " + std::to_string(line_no) +
                          ": expected 'destination : flow' in '" + chunk + "'");
      }
      if (dest < 1 || static_cast<std::size_t>(dest) > trips.n_zones) {
        throw FormatError(path + " line " + std::to_string(line_no) + ": destination zone " +
                          std::to_string(dest) + " exceeds <NUMBER OF ZONES>");
      }
      if (flow < 0.0) {
        throw FormatError(path + " line " + std::to_string(line_no) + ": negative demand");
      }
      parsed_total += flow;
      if (flow > 0.0) {
        trips.entries.emplace_back(origin, static_cast<std::size_t>(dest), flow);
      }
    }
  }
  const double scale = std::max(1.0, std::abs(trips.total_flow));
  if (std::abs(parsed_total - trips.total_flow) > 1e-6 * scale) {
    throw FormatError(path + ": entries sum to " + std::to_string(parsed_total) +
                      " but <TOTAL OD FLOW> declares " + std::to_string(trips.total_flow));
  }
  return trips;
}

RoadNetwork build_network(const TntpNetwork& net, const TntpTrips& trips,
                          const NetworkBuildOptions& opt) {
  if (net.arcs.empty()) throw InvalidInputError("build_network: no arcs");
  if (opt.context_dim == 0) throw InvalidInputError("build_network: zero context dimension");

  RoadNetwork rn;
  rn.incidence = Matrix(net.n_nodes, net.arcs.size());
  rn.free_flow.resize(net.arcs.size());
  rn.base_capacity.resize(net.arcs.size());
  for (std::size_t e = 0; e < net.arcs.size(); ++e) {
    const TntpArc& arc = net.arcs[e];
    if (arc.init_node == arc.term_node) {
      throw InvalidInputError("build_network: arc " + std::to_string(e + 1) + " is a self-loop");
    }
    rn.incidence(arc.init_node - 1, e) = -1.0;
    rn.incidence(arc.term_node - 1, e) = 1.0;
    rn.free_flow[e] = arc.free_flow_time;
    rn.base_capacity[e] = arc.capacity;
  }
  for (const auto& [o, t, q] : trips.entries) {
    if (o < 1 || o > net.n_nodes || t < 1 || t > net.n_nodes) {
      throw InvalidInputError("build_network: OD node " +
                              std::to_string(o > net.n_nodes ? o : t) + " outside the graph");
    }
    rn.od_pairs.emplace_back(o - 1, t - 1);
    rn.od_demand.push_back(q);
  }
  rn.eps_cap = opt.eps_cap;
  rn.bpr_coeff = opt.bpr_coeff;
  rn.context_dim = opt.context_dim;
  rn.context_lo = 0.0;
  rn.context_hi = 1.0;
  RngStream rng(opt.seed, "game_matrix");
  rn.w = sample_context_matrix(rng, net.arcs.size(), opt.context_dim);
  return rn;
}

GameDefinition make_contextual_matrix_game(std::size_t actions, std::uint64_t seed) {
  MatrixGameSpec gs;
  gs.actions = actions;
  gs.context_dim = 3;
  gs.wb = Matrix(actions * actions, gs.context_dim);
  RngStream rng(seed, "game_matrix");
  for (double& v : gs.wb.a) v = rng.uniform(-1.0, 1.0);
  return make_matrix_game(std::move(gs));
}

GameDefinition make_braess_game(std::uint64_t seed) {
  RoadNetwork net = braess_network();
  RngStream rng(seed, "game_matrix");
  net.w = sample_context_matrix(rng, net.free_flow.size(), net.context_dim);
  return make_traffic_game(std::move(net));
}

namespace {

// Step size that keeps the splitting iteration stable. The curvature proxy is
// the travel-time slope at 1.5x the most pessimistic capacity, and the lifted
// iteration couples all K blocks through the shared flow, so the proxy scales
// with K. Measured stability edges (four-node toy network and Sioux Falls)
// sit at 8-16x the proxy step 0.25/(K L); 6x holds a safety margin on both
// while staying fast on large networks.
double traffic_step_bound(const RoadNetwork& net) {
  double slope = 0.0;
  for (std::size_t e = 0; e < net.free_flow.size(); ++e) {
    const double c_min = net.base_capacity[e] * (1.0 - net.eps_cap);
    slope = std::max(slope, 13.5 * net.bpr_coeff * net.free_flow[e] / c_min);
  }
  const double k = static_cast<double>(std::max<std::size_t>(1, net.od_pairs.size()));
  const double alpha = 1.5 / (k * std::max(slope, 1e-12));
  return std::min(0.5, std::max(1e-6, alpha));
}

}  // namespace

void recommended_generation_config(const GameDefinition& def, GenerateOptions& opt) {
  if (std::holds_alternative<MatrixGameSpec>(def.game)) {
    const auto& g = std::get<MatrixGameSpec>(def.game);
    // The payoff part of the gradient map is pure rotation with operator norm
    // at most the Frobenius bound of the skew payoff over the context box;
    // the entropy part is strongly monotone with curvature at least the
    // entropy weight. A step below 2 mu / (mu^2 + kappa^2) contracts. The
    // measured divergence edge (2 to 6 actions, 30-sample sweeps) sits at
    // 2.5-12x the step chosen here, tightest where the cap binds; the cap
    // keeps near-symmetric payoffs from overshooting the entropy floor.
    const double d_max = std::max(std::abs(g.context_lo), std::abs(g.context_hi));
    double skew2 = 0.0;
    for (std::size_t i = 0; i < g.actions; ++i) {
      for (std::size_t j = 0; j < g.actions; ++j) {
        double bound = 0.0;
        for (std::size_t c = 0; c < g.context_dim; ++c) {
          bound += std::abs(g.wb(i * g.actions + j, c) - g.wb(j * g.actions + i, c)) * d_max;
        }
        skew2 += bound * bound;
      }
    }
    const double mu = g.entropy_weight;
    opt.alpha = std::min(0.25, 2.0 * mu / (mu * mu + skew2));
    opt.tol = 1e-10;
    return;
  }
  const auto& net = std::get<RoadNetwork>(def.game);
  opt.alpha = traffic_step_bound(net);
  // The lifted state scales with demand, so an absolute stopping test is
  // meaningless on vehicle-per-day networks. 1e-8 relative leaves the
  // aggregate flows accurate to well under 1e-4 relative (the block
  // decomposition drifts far more slowly than the flows converge).
  double total_demand = 0.0;
  for (double q : net.od_demand) total_demand += q;
  opt.tol = 1e-8 * std::max(1.0, total_demand);
}

namespace {

// ---- feasible-point samplers for equilibrium certificates ----
// These construct feasible actions from first principles (path mixtures for
// flows, normalized positive draws for simplices) so the certificate does not
// depend on any projection code.

std::vector<std::vector<std::size_t>> enumerate_paths(const Matrix& incidence,
                                                      std::size_t origin, std::size_t dest,
                                                      std::size_t cap) {
  const std::size_t nodes = incidence.rows;
  const std::size_t edges = incidence.cols;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> out(nodes);  // (arc, head)
  for (std::size_t e = 0; e < edges; ++e) {
    std::size_t tail = nodes, head = nodes;
    for (std::size_t v = 0; v < nodes; ++v) {
      if (incidence(v, e) < 0) tail = v;
      if (incidence(v, e) > 0) head = v;
    }
    if (tail < nodes && head < nodes) out[tail].emplace_back(e, head);
  }

  std::vector<std::vector<std::size_t>> paths;
  if (origin == dest) {
    paths.push_back({});  // the empty route carries the (degenerate) demand
    return paths;
  }
  std::vector<bool> visited(nodes, false);
  std::vector<std::size_t> arc_stack;
  // depth-first, arcs in column order: deterministic path set
  std::function<void(std::size_t)> dfs = [&](std::size_t v) {
    if (paths.size() >= cap) return;
    if (v == dest) {
      paths.push_back(arc_stack);
      return;
    }
    visited[v] = true;
    for (const auto& [arc, head] : out[v]) {
      if (visited[head]) continue;
      arc_stack.push_back(arc);
      dfs(head);
      arc_stack.pop_back();
      if (paths.size() >= cap) break;
    }
    visited[v] = false;
  };
  dfs(origin);
  return paths;
}

struct FeasibleSampler {
  // matrix game
  std::size_t actions = 0;
  // traffic
  const RoadNetwork* net = nullptr;
  std::vector<std::vector<std::vector<std::size_t>>> od_paths;

  std::size_t dim = 0;

  Vec draw(RngStream& rng) const {
    Vec y(dim, 0.0);
    if (actions > 0) {
      for (std::size_t block = 0; block < 2; ++block) {
        double sum = 0.0;
        for (std::size_t i = 0; i < actions; ++i) {
          const double e = -std::log(1.0 - rng.uniform01());
          y[block * actions + i] = e;
          sum += e;
        }
        for (std::size_t i = 0; i < actions; ++i) y[block * actions + i] /= sum;
      }
      return y;
    }
    for (std::size_t k = 0; k < od_paths.size(); ++k) {
      const auto& paths = od_paths[k];
      Vec wts(paths.size());
      double sum = 0.0;
      for (double& w : wts) {
        w = -std::log(1.0 - rng.uniform01());
        sum += w;
      }
      for (std::size_t p = 0; p < paths.size(); ++p) {
        const double flow = net->od_demand[k] * wts[p] / sum;
        for (std::size_t arc : paths[p]) y[arc] += flow;
      }
    }
    return y;
  }
};

FeasibleSampler make_sampler(const GameDefinition& def) {
  FeasibleSampler s;
  if (const auto* gs = std::get_if<MatrixGameSpec>(&def.game)) {
    s.actions = gs->actions;
    s.dim = 2 * gs->actions;
    return s;
  }
  const auto& net = std::get<RoadNetwork>(def.game);
  s.net = &net;
  s.dim = net.free_flow.size();
  for (std::size_t k = 0; k < net.od_pairs.size(); ++k) {
    auto paths = enumerate_paths(net.incidence, net.od_pairs[k].first, net.od_pairs[k].second, 20);
    if (paths.empty()) {
      throw DomainError("certificate sampler: no route from node " +
                        std::to_string(net.od_pairs[k].first + 1) + " to node " +
                        std::to_string(net.od_pairs[k].second + 1));
    }
    s.od_paths.push_back(std::move(paths));
  }
  return s;
}

std::string context_to_string(const Vec& d) {
  std::string s = "[";
  char buf[40];
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6g", d[i]);
    s += buf;
    if (i + 1 < d.size()) s += ", ";
  }
  return s + "]";
}

// x = z - V(V^T z) + p
Vec block_affine_apply(const Matrix& v, const double* p, const Vec& z) {
  Vec t = matvec_t(v, z);
  Vec out = z;
  Vec corr = matvec(v, t);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += p[i] - corr[i];
  return out;
}

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 14695981039346656037ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::string fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::uint64_t h = 14695981039346656037ULL;
  char buf[65536];
  while (in) {
    in.read(buf, sizeof buf);
    h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

std::string fnv1a_string(const std::string& s) {
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(fnv1a(s.data(), s.size())));
  return hex;
}

json game_to_json(const GameDefinition& def);

}  // namespace

EquilibriumDataset generate_dataset(const GameDefinition& def, const GenerateOptions& opt) {
  std::size_t ctx_dim = 0, act_dim = 0;
  double lo = 0.0, hi = 1.0;
  const MinkowskiSum* lifted = nullptr;
  if (const auto* gs = std::get_if<MatrixGameSpec>(&def.game)) {
    ctx_dim = gs->context_dim;
    act_dim = 2 * gs->actions;
    lo = gs->context_lo;
    hi = gs->context_hi;
  } else {
    const auto& net = std::get<RoadNetwork>(def.game);
    ctx_dim = net.context_dim;
    act_dim = net.free_flow.size();
    lo = net.context_lo;
    hi = net.context_hi;
    lifted = std::get_if<MinkowskiSum>(&def.constraint.v);
  }

  OperatorFn truth = ground_truth_operator(def);
  SolverConfig cfg;
  cfg.alpha = opt.alpha;
  cfg.tol = opt.tol;
  cfg.max_depth = opt.max_iters;

  FeasibleSampler sampler;
  if (opt.cert_probes > 0 && opt.n_samples > 0) sampler = make_sampler(def);

  const std::size_t n = opt.n_samples;
  std::vector<SampleRecord> recs(n);
  std::vector<std::exception_ptr> errs(n);
  std::atomic<bool> failed{false};

  parallel_for(opt.policy, n, [&](std::size_t i) {
    if (failed.load(std::memory_order_relaxed)) return;
    try {
      RngStream crng(opt.seed, "sample_ctx_" + std::to_string(i));
      Vec d(ctx_dim);
      for (double& v : d) v = crng.uniform(lo, hi);

      SolveTrace t = solve_fixed_point(truth, def.constraint, d, cfg);
      if (!t.converged) {
        const double res = t.residuals.empty() ? std::nan("") : t.residuals.back();
        throw DomainError("generation: sample " + std::to_string(i) +
                          " did not reach tolerance " + std::to_string(opt.tol) + " (residual " +
                          std::to_string(res) + " after " + std::to_string(opt.max_iters) +
                          " iterations); context " + context_to_string(d));
      }

      SampleRecord rec;
      rec.x_star = t.solution;

      if (lifted) {
        const ProductState& zbar = t.zbar_state;
        const std::size_t k_blocks = zbar.blocks;
        rec.block_flows.assign(k_blocks * act_dim, 0.0);
        const auto& net = std::get<RoadNetwork>(def.game);
        for (std::size_t k = 0; k < k_blocks; ++k) {
          Vec zk(zbar.block(k), zbar.block(k) + act_dim);
          Vec xk = block_affine_apply(lifted->pinv->v, lifted->particular.row(k), zk);
          // Recovered block flows inherit the solve accuracy: a run stopped at
          // residual opt.tol can leave single coordinates a small multiple of
          // that below zero, which is roundoff, not infeasibility. The guard
          // is for violations at demand scale.
          const double feas_tol =
              std::max(1e-8, 1e-2 * opt.tol) * std::max(1.0, net.od_demand[k]);
          for (double& v : xk) {
            if (v < -feas_tol) {
              throw DomainError("generation: sample " + std::to_string(i) + " block " +
                                std::to_string(k) + " leaves the nonnegative cone by " +
                                std::to_string(-v));
            }
            v = std::max(v, 0.0);
          }
          std::copy(xk.begin(), xk.end(), rec.block_flows.begin() + k * act_dim);
        }
        if (!opt.keep_blocks) {
          rec.block_flows.clear();
          rec.block_flows.shrink_to_fit();
        }
      }

      if (opt.cert_probes > 0) {
        RngStream prng(opt.seed, "sample_cert_" + std::to_string(i));
        Vec f_star = truth(rec.x_star, d);
        double worst = 1e300;
        for (std::size_t p = 0; p < opt.cert_probes; ++p) {
          Vec y = sampler.draw(prng);
          double gap = 0.0, dist2 = 0.0;
          for (std::size_t j = 0; j < act_dim; ++j) {
            const double diff = y[j] - rec.x_star[j];
            gap += f_star[j] * diff;
            dist2 += diff * diff;
          }
          worst = std::min(worst, gap / (1.0 + std::sqrt(dist2)));
        }
        rec.cert_residual = std::max(0.0, -worst);
        if (worst < -1e-5) {
          throw DomainError("generation: sample " + std::to_string(i) +
                            " violates the equilibrium inequality (normalized gap " +
                            std::to_string(worst) + "); context " + context_to_string(d));
        }
      }

      rec.d = std::move(d);
      recs[i] = std::move(rec);
    } catch (...) {
      errs[i] = std::current_exception();
      // Later iterations bail out early; finishing the sweep would only
      // delay the rethrow below.
      failed.store(true, std::memory_order_relaxed);
    }
  });
  for (const auto& e : errs) {
    if (e) std::rethrow_exception(e);
  }

  EquilibriumDataset ds;
  ds.context_dim = ctx_dim;
  ds.action_dim = act_dim;
  ds.samples = std::move(recs);
  const std::size_t n_test = std::min(opt.n_test == SIZE_MAX ? n / 11 : opt.n_test, n);
  const std::size_t n_train = n - n_test;
  ds.train_idx.resize(n_train);
  std::iota(ds.train_idx.begin(), ds.train_idx.end(), 0);
  ds.test_idx.resize(n_test);
  std::iota(ds.test_idx.begin(), ds.test_idx.end(), n_train);
  ds.provenance.seed = opt.seed;
  ds.provenance.solver_tol = opt.tol;
  ds.provenance.solver_alpha = opt.alpha;
  ds.provenance.game_digest = fnv1a_string(game_to_json(def).dump());
  return ds;
}

namespace {

json game_to_json(const GameDefinition& def) {
  json j;
  if (const auto* gs = std::get_if<MatrixGameSpec>(&def.game)) {
    j["kind"] = "matrix";
    j["actions"] = gs->actions;
    j["context_dim"] = gs->context_dim;
    j["entropy_weight"] = gs->entropy_weight;
    j["context_range"] = {gs->context_lo, gs->context_hi};
    j["wb"] = gs->wb.a;
    return j;
  }
  const auto& net = std::get<RoadNetwork>(def.game);
  j["kind"] = "traffic";
  j["nodes"] = net.incidence.rows;
  j["edges"] = net.incidence.cols;
  std::vector<int> inc(net.incidence.a.size());
  for (std::size_t i = 0; i < inc.size(); ++i) inc[i] = static_cast<int>(net.incidence.a[i]);
  j["incidence"] = inc;
  j["free_flow"] = net.free_flow;
  j["base_capacity"] = net.base_capacity;
  json od = json::array();
  for (std::size_t k = 0; k < net.od_pairs.size(); ++k) {
    od.push_back({net.od_pairs[k].first, net.od_pairs[k].second, net.od_demand[k]});
  }
  j["od"] = od;
  j["w"] = net.w.a;
  j["eps_cap"] = net.eps_cap;
  j["bpr_coeff"] = net.bpr_coeff;
  j["context_dim"] = net.context_dim;
  j["context_range"] = {net.context_lo, net.context_hi};
  return j;
}

GameDefinition game_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "matrix") {
    MatrixGameSpec gs;
    gs.actions = j.at("actions").get<std::size_t>();
    gs.context_dim = j.at("context_dim").get<std::size_t>();
    gs.entropy_weight = j.at("entropy_weight").get<double>();
    gs.context_lo = j.at("context_range").at(0).get<double>();
    gs.context_hi = j.at("context_range").at(1).get<double>();
    gs.wb = Matrix(gs.actions * gs.actions, gs.context_dim);
    const auto wb = j.at("wb").get<std::vector<double>>();
    if (wb.size() != gs.wb.a.size()) throw FormatError("metadata: wb length mismatch");
    gs.wb.a = wb;
    return make_matrix_game(std::move(gs));
  }
  if (kind != "traffic") throw FormatError("metadata: unknown game kind '" + kind + "'");
  RoadNetwork net;
  const std::size_t nodes = j.at("nodes").get<std::size_t>();
  const std::size_t edges = j.at("edges").get<std::size_t>();
  net.incidence = Matrix(nodes, edges);
  const auto inc = j.at("incidence").get<std::vector<int>>();
  if (inc.size() != nodes * edges) throw FormatError("metadata: incidence length mismatch");
  for (std::size_t i = 0; i < inc.size(); ++i) net.incidence.a[i] = inc[i];
  net.free_flow = j.at("free_flow").get<Vec>();
  net.base_capacity = j.at("base_capacity").get<Vec>();
  for (const auto& row : j.at("od")) {
    net.od_pairs.emplace_back(row.at(0).get<std::size_t>(), row.at(1).get<std::size_t>());
    net.od_demand.push_back(row.at(2).get<double>());
  }
  net.eps_cap = j.at("eps_cap").get<double>();
  net.bpr_coeff = j.at("bpr_coeff").get<double>();
  net.context_dim = j.at("context_dim").get<std::size_t>();
  net.context_lo = j.at("context_range").at(0).get<double>();
  net.context_hi = j.at("context_range").at(1).get<double>();
  net.w = Matrix(edges, net.context_dim);
  const auto w = j.at("w").get<std::vector<double>>();
  if (w.size() != net.w.a.size()) throw FormatError("metadata: w length mismatch");
  net.w.a = w;
  return make_traffic_game(std::move(net));
}

std::string csv_header(std::size_t ctx_dim, std::size_t act_dim) {
  std::string h;
  for (std::size_t i = 0; i < ctx_dim; ++i) h += "d_" + std::to_string(i + 1) + ",";
  for (std::size_t i = 0; i < act_dim; ++i) {
    h += "x_" + std::to_string(i + 1);
    if (i + 1 < act_dim) h += ",";
  }
  return h;
}

void write_csv(const std::string& path, const EquilibriumDataset& ds,
               const std::vector<std::size_t>& idx) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw FormatError("cannot open " + path + " for writing");
  const std::string header = csv_header(ds.context_dim, ds.action_dim);
  std::fprintf(f, "%s\n", header.c_str());
  for (std::size_t i : idx) {
    const SampleRecord& rec = ds.samples[i];
    bool first = true;
    for (double v : rec.d) {
      std::fprintf(f, first ? "%.17g" : ",%.17g", v);
      first = false;
    }
    for (double v : rec.x_star) std::fprintf(f, ",%.17g", v);
    std::fputc('\n', f);
  }
  if (std::fclose(f) != 0) throw FormatError("write failed: " + path);
}

void read_csv(const std::string& path, const EquilibriumDataset& ds, std::size_t expected_rows,
              std::vector<SampleRecord>& out) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty file");
  if (trim(line) != csv_header(ds.context_dim, ds.action_dim)) {
    throw FormatError(path + ": header does not match the metadata dimensions");
  }
  const std::size_t n_cols = ds.context_dim + ds.action_dim;
  std::size_t rows = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    SampleRecord rec;
    rec.d.reserve(ds.context_dim);
    rec.x_star.reserve(ds.action_dim);
    const char* p = line.c_str();
    std::size_t col = 0;
    while (true) {
      char* end = nullptr;
      const double v = std::strtod(p, &end);
      if (end == p) {
        throw FormatError(path + " line " + std::to_string(line_no) + ": malformed number");
      }
      if (col < ds.context_dim) {
        rec.d.push_back(v);
      } else {
        rec.x_star.push_back(v);
      }
      ++col;
      p = end;
      while (*p == ' ' || *p == '\t' || *p == '\r') ++p;
      if (*p == ',') {
        ++p;
        continue;
      }
      if (*p == '\0') break;
      throw FormatError(path + " line " + std::to_string(line_no) + ": unexpected '" +
                        std::string(1, *p) + "'");
    }
    if (col != n_cols) {
      throw FormatError(path + " line " + std::to_string(line_no) + ": expected " +
                        std::to_string(n_cols) + " columns, found " + std::to_string(col));
    }
    out.push_back(std::move(rec));
    ++rows;
  }
  if (rows != expected_rows) {
    throw FormatError(path + ": metadata declares " + std::to_string(expected_rows) +
                      " rows but the file has " + std::to_string(rows));
  }
}

const char kBlocksMagic[4] = {'E', 'Q', 'N', 'B'};

void write_blocks(const std::string& path, const EquilibriumDataset& ds, std::size_t k_blocks) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open " + path + " for writing");
  f.write(kBlocksMagic, 4);
  const std::uint32_t version = 1;
  const std::uint32_t kb = static_cast<std::uint32_t>(k_blocks);
  const std::uint32_t dim = static_cast<std::uint32_t>(ds.action_dim);
  const std::uint64_t n = ds.samples.size();
  f.write(reinterpret_cast<const char*>(&version), 4);
  f.write(reinterpret_cast<const char*>(&kb), 4);
  f.write(reinterpret_cast<const char*>(&dim), 4);
  f.write(reinterpret_cast<const char*>(&n), 8);
  for (const SampleRecord& rec : ds.samples) {
    if (rec.block_flows.size() != k_blocks * ds.action_dim) {
      throw InvalidInputError("write_dataset: a sample is missing its block decomposition");
    }
    f.write(reinterpret_cast<const char*>(rec.block_flows.data()),
            static_cast<std::streamsize>(rec.block_flows.size() * sizeof(double)));
  }
  if (!f) throw FormatError("write failed: " + path);
}

void read_blocks(const std::string& path, EquilibriumDataset& ds, std::size_t k_blocks) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path);
  char magic[4] = {};
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kBlocksMagic, 4) != 0) {
    throw FormatError(path + " is not a block-flow container");
  }
  std::uint32_t version = 0, kb = 0, dim = 0;
  std::uint64_t n = 0;
  f.read(reinterpret_cast<char*>(&version), 4);
  f.read(reinterpret_cast<char*>(&kb), 4);
  f.read(reinterpret_cast<char*>(&dim), 4);
  f.read(reinterpret_cast<char*>(&n), 8);
  if (!f) throw FormatError(path + ": truncated header");
  if (version != 1) {
    throw FormatError(path + ": block format version " + std::to_string(version) +
                      "; this build reads version 1");
  }
  if (kb != k_blocks || dim != ds.action_dim || n != ds.samples.size()) {
    throw FormatError(path + ": shape does not match the metadata");
  }
  for (SampleRecord& rec : ds.samples) {
    rec.block_flows.resize(k_blocks * ds.action_dim);
    f.read(reinterpret_cast<char*>(rec.block_flows.data()),
           static_cast<std::streamsize>(rec.block_flows.size() * sizeof(double)));
    if (!f) throw FormatError(path + ": truncated block data");
  }
}

bool split_is_contiguous(const EquilibriumDataset& ds) {
  const std::size_t n_train = ds.train_idx.size();
  for (std::size_t i = 0; i < n_train; ++i) {
    if (ds.train_idx[i] != i) return false;
  }
  for (std::size_t i = 0; i < ds.test_idx.size(); ++i) {
    if (ds.test_idx[i] != n_train + i) return false;
  }
  return n_train + ds.test_idx.size() == ds.samples.size();
}

}  // namespace

void write_dataset(const EquilibriumDataset& ds, const GameDefinition& def,
                   const std::string& dir) {
  if (!split_is_contiguous(ds)) {
    throw InvalidInputError("write_dataset: splits must be the contiguous train-then-test ranges");
  }
  for (const SampleRecord& rec : ds.samples) {
    if (rec.d.size() != ds.context_dim || rec.x_star.size() != ds.action_dim) {
      throw ShapeError("write_dataset: sample dims disagree with the dataset dims");
    }
  }
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string train_path = (fs::path(dir) / "train.csv").string();
  const std::string test_path = (fs::path(dir) / "test.csv").string();
  const std::string blocks_path = (fs::path(dir) / "blocks.bin").string();
  write_csv(train_path, ds, ds.train_idx);
  write_csv(test_path, ds, ds.test_idx);

  // Per-block flows are optional on disk: large traffic datasets drop them
  // to keep the artifact at CSV scale. Presence is all-or-nothing.
  const auto* lifted = std::get_if<MinkowskiSum>(&def.constraint.v);
  const std::size_t k_blocks = lifted ? lifted->demands.size() : 0;
  const bool with_blocks =
      k_blocks > 0 && !ds.samples.empty() && !ds.samples.front().block_flows.empty();
  if (with_blocks) write_blocks(blocks_path, ds, k_blocks);

  const json game = game_to_json(def);
  json meta;
  meta["format"] = "eqnet-dataset";
  meta["version"] = 1;
  meta["seed"] = ds.provenance.seed;
  meta["solver"] = {{"alpha", ds.provenance.solver_alpha}, {"tol", ds.provenance.solver_tol}};
  meta["context_dim"] = ds.context_dim;
  meta["action_dim"] = ds.action_dim;
  meta["counts"] = {{"train", ds.train_idx.size()}, {"test", ds.test_idx.size()}};
  meta["has_blocks"] = with_blocks;
  Vec residuals;
  residuals.reserve(ds.samples.size());
  for (const SampleRecord& rec : ds.samples) residuals.push_back(rec.cert_residual);
  meta["cert_residuals"] = residuals;
  json digests;
  digests["train.csv"] = fnv1a_file(train_path);
  digests["test.csv"] = fnv1a_file(test_path);
  if (with_blocks) digests["blocks.bin"] = fnv1a_file(blocks_path);
  meta["digests"] = digests;
  meta["game_digest"] = fnv1a_string(game.dump());
  meta["game"] = game;

  std::ofstream mf((fs::path(dir) / "meta.json").string(), std::ios::trunc);
  if (!mf) throw FormatError("cannot open " + (fs::path(dir) / "meta.json").string());
  mf << meta.dump(2) << "\n";
  if (!mf) throw FormatError("write failed: meta.json");
}

LoadedDataset read_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string meta_path = (fs::path(dir) / "meta.json").string();
  std::ifstream mf(meta_path);
  if (!mf) throw FormatError("cannot open " + meta_path);
  json meta;
  try {
    mf >> meta;
  } catch (const std::exception& e) {
    throw FormatError(meta_path + ": " + e.what());
  }

  LoadedDataset out;
  try {
    if (meta.at("format").get<std::string>() != "eqnet-dataset") {
      throw FormatError(meta_path + ": not a dataset description");
    }
    if (meta.at("version").get<int>() != 1) {
      throw FormatError(meta_path + ": unsupported dataset version");
    }
    out.def = game_from_json(meta.at("game"));
    out.ds.context_dim = meta.at("context_dim").get<std::size_t>();
    out.ds.action_dim = meta.at("action_dim").get<std::size_t>();
    out.ds.provenance.seed = meta.at("seed").get<std::uint64_t>();
    out.ds.provenance.solver_alpha = meta.at("solver").at("alpha").get<double>();
    out.ds.provenance.solver_tol = meta.at("solver").at("tol").get<double>();
    out.ds.provenance.game_digest = meta.at("game_digest").get<std::string>();

    const std::size_t n_train = meta.at("counts").at("train").get<std::size_t>();
    const std::size_t n_test = meta.at("counts").at("test").get<std::size_t>();
    const std::string train_path = (fs::path(dir) / "train.csv").string();
    const std::string test_path = (fs::path(dir) / "test.csv").string();
    read_csv(train_path, out.ds, n_train, out.ds.samples);
    read_csv(test_path, out.ds, n_test, out.ds.samples);
    out.ds.train_idx.resize(n_train);
    std::iota(out.ds.train_idx.begin(), out.ds.train_idx.end(), 0);
    out.ds.test_idx.resize(n_test);
    std::iota(out.ds.test_idx.begin(), out.ds.test_idx.end(), n_train);

    const auto residuals = meta.at("cert_residuals").get<Vec>();
    if (residuals.size() != out.ds.samples.size()) {
      throw FormatError(meta_path + ": certificate list length mismatch");
    }
    for (std::size_t i = 0; i < residuals.size(); ++i) {
      out.ds.samples[i].cert_residual = residuals[i];
    }

    const auto* lifted = std::get_if<MinkowskiSum>(&out.def.constraint.v);
    const bool has_blocks = meta.value("has_blocks", false);
    if (has_blocks && !lifted) {
      throw FormatError(meta_path + ": has_blocks set for a game without block structure");
    }
    if (has_blocks) {
      read_blocks((fs::path(dir) / "blocks.bin").string(), out.ds, lifted->demands.size());
    }

    const json& digests = meta.at("digests");
    for (const auto& [name, want] : digests.items()) {
      const std::string got = fnv1a_file((fs::path(dir) / name).string());
      if (got != want.get<std::string>()) {
        out.ds.warnings.push_back(name + ": content digest " + got +
                                  " does not match the recorded " + want.get<std::string>());
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(meta_path + ": " + e.what());
  }
  return out;
}

}  // namespace eqnet
