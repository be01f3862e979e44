#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dfedpgp {

/// Directed communication graph for one round. Self-loops are never stored;
/// mixing-weight construction adds them.
class DirectedGraph {
 public:
  DirectedGraph() = default;
  explicit DirectedGraph(std::size_t m);
  /// Builds from per-client out-neighbor lists. Lists are sorted and
  /// de-duplicated. Throws ConfigError on self-loops or out-of-range ids.
  DirectedGraph(std::size_t m, std::vector<std::vector<std::size_t>> out_edges);

  static DirectedGraph from_edges(
      std::size_t m, std::span<const std::pair<std::size_t, std::size_t>> edges);

  std::size_t size() const { return m_; }
  const std::vector<std::size_t>& out_neighbors(std::size_t i) const {
    return out_[i];
  }
  const std::vector<std::size_t>& in_neighbors(std::size_t i) const {
    return in_[i];
  }
  bool has_edge(std::size_t from, std::size_t to) const;
  std::size_t edge_count() const;
  bool is_symmetric() const;

  friend bool operator==(const DirectedGraph& a, const DirectedGraph& b) {
    return a.m_ == b.m_ && a.out_ == b.out_;
  }

 private:
  void rebuild_in_edges();

  std::size_t m_ = 0;
  std::vector<std::vector<std::size_t>> out_;
  std::vector<std::vector<std::size_t>> in_;
};

enum class MixingScheme { kPushColumnStochastic, kPullRowStochastic, kDoublyStochastic };

enum class TopologyKind {
  kRandomRegularDirected,
  kRandomRegularUndirected,
  kRing,
  kComplete,
  kFromFile,
};

std::string to_string(MixingScheme scheme);
std::string to_string(TopologyKind kind);
MixingScheme parse_mixing_scheme(const std::string& name);
TopologyKind parse_topology_kind(const std::string& name);

/// Dense m x m mixing weights for one round. Entry (i, j) is the weight
/// client i applies to the value held by client j.
class MixingMatrix {
 public:
  MixingMatrix(std::size_t m, MixingScheme scheme, std::vector<double> weights);

  static MixingMatrix identity(std::size_t m, MixingScheme scheme);

  std::size_t size() const { return m_; }
  MixingScheme scheme() const { return scheme_; }
  double operator()(std::size_t i, std::size_t j) const {
    return weights_[i * m_ + j];
  }
  std::span<const double> row(std::size_t i) const {
    return {weights_.data() + i * m_, m_};
  }
  const std::vector<double>& weights() const { return weights_; }

  /// Number of nonzero entries of row i when they are all exactly 1/k, else 0.
  /// Such rows are applied as a plain sum divided by k, which keeps the
  /// mixed value of identical inputs exact.
  std::size_t uniform_row_count(std::size_t i) const { return uniform_rows_[i]; }

  /// Checks the stochasticity declared by scheme() to `tol`, entries in
  /// [0, 1], and a strictly positive diagonal.
  bool satisfies_scheme(double tol = 1e-12) const;

 private:
  std::size_t m_;
  MixingScheme scheme_;
  std::vector<double> weights_;
  std::vector<std::size_t> uniform_rows_;
};

/// Seeded generator of per-round graphs. graph(t) is a pure function of
/// (seed, t, kind, degree).
class TopologySchedule {
 public:
  TopologySchedule(std::size_t m, TopologyKind kind, std::size_t degree,
                   std::uint64_t seed, std::size_t window = 1);

  /// Schedule replaying graphs read from a file; round t uses entry
  /// t mod rounds.size().
  static TopologySchedule from_rounds(std::size_t m,
                                      std::vector<DirectedGraph> rounds,
                                      std::size_t window = 1);

  std::size_t size() const { return m_; }
  TopologyKind kind() const { return kind_; }
  std::size_t degree() const { return degree_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t window() const { return window_; }

  DirectedGraph graph(std::size_t round) const;

 private:
  std::size_t m_;
  TopologyKind kind_;
  std::size_t degree_;
  std::uint64_t seed_;
  std::size_t window_;
  std::vector<DirectedGraph> file_rounds_;
};

DirectedGraph generate_round_topology(const TopologySchedule& schedule,
                                      std::size_t round);

MixingMatrix build_mixing_matrix(const DirectedGraph& graph, MixingScheme scheme);

DirectedGraph union_graph(std::span<const DirectedGraph> graphs);

bool is_strongly_connected(const DirectedGraph& graph);

/// True iff the union of rounds [start_round, start_round + window) is
/// strongly connected.
bool check_window_connectivity(const TopologySchedule& schedule,
                               std::size_t start_round, std::size_t window);

/// Parses the `round_index: i->j, i->k, ...` text format.
std::vector<DirectedGraph> parse_topology_file(std::istream& in, std::size_t m);
std::vector<DirectedGraph> load_topology_file(const std::string& path,
                                              std::size_t m);
void write_topology_file(std::ostream& out, std::span<const DirectedGraph> rounds);

}  // namespace dfedpgp
