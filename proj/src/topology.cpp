#include "dfedpgp/topology.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "dfedpgp/error.hpp"
#include "dfedpgp/rng.hpp"

namespace dfedpgp {

DirectedGraph::DirectedGraph(std::size_t m) : m_(m), out_(m), in_(m) {}

DirectedGraph::DirectedGraph(std::size_t m,
                             std::vector<std::vector<std::size_t>> out_edges)
    : m_(m), out_(std::move(out_edges)) {
  if (out_.size() != m_) {
    throw ConfigError("graph: expected " + std::to_string(m_) +
                      " adjacency lists, got " + std::to_string(out_.size()));
  }
  for (std::size_t i = 0; i < m_; ++i) {
    auto& list = out_[i];
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
    for (std::size_t j : list) {
      if (j >= m_) {
        throw ConfigError("graph: edge " + std::to_string(i) + "->" +
                          std::to_string(j) + " out of range for m=" +
                          std::to_string(m_));
      }
      if (j == i) {
        throw ConfigError("graph: self-loop on client " + std::to_string(i));
      }
    }
  }
  rebuild_in_edges();
}

DirectedGraph DirectedGraph::from_edges(
    std::size_t m, std::span<const std::pair<std::size_t, std::size_t>> edges) {
  std::vector<std::vector<std::size_t>> out(m);
  for (auto [from, to] : edges) {
    if (from >= m) {
      throw ConfigError("graph: source " + std::to_string(from) +
                        " out of range for m=" + std::to_string(m));
    }
    out[from].push_back(to);
  }
  return DirectedGraph(m, std::move(out));
}

void DirectedGraph::rebuild_in_edges() {
  in_.assign(m_, {});
  for (std::size_t i = 0; i < m_; ++i) {
    for (std::size_t j : out_[i]) in_[j].push_back(i);
  }
  // Sources are visited in ascending order, so every in-list is sorted.
}

bool DirectedGraph::has_edge(std::size_t from, std::size_t to) const {
  const auto& list = out_[from];
  return std::binary_search(list.begin(), list.end(), to);
}

std::size_t DirectedGraph::edge_count() const {
  std::size_t total = 0;
  for (const auto& list : out_) total += list.size();
  return total;
}

bool DirectedGraph::is_symmetric() const { return out_ == in_; }

std::string to_string(MixingScheme scheme) {
  switch (scheme) {
    case MixingScheme::kPushColumnStochastic:
      return "push";
    case MixingScheme::kPullRowStochastic:
      return "pull";
    case MixingScheme::kDoublyStochastic:
      return "doubly";
  }
  return "unknown";
}

std::string to_string(TopologyKind kind) {
  switch (kind) {
    case TopologyKind::kRandomRegularDirected:
      return "random_directed";
    case TopologyKind::kRandomRegularUndirected:
      return "random_undirected";
    case TopologyKind::kRing:
      return "ring";
    case TopologyKind::kComplete:
      return "complete";
    case TopologyKind::kFromFile:
      return "file";
  }
  return "unknown";
}

MixingScheme parse_mixing_scheme(const std::string& name) {
  if (name == "push") return MixingScheme::kPushColumnStochastic;
  if (name == "pull") return MixingScheme::kPullRowStochastic;
  if (name == "doubly") return MixingScheme::kDoublyStochastic;
  throw ConfigError("unknown mixing scheme '" + name +
                    "' (expected push, pull or doubly)");
}

TopologyKind parse_topology_kind(const std::string& name) {
  if (name == "random_directed") return TopologyKind::kRandomRegularDirected;
  if (name == "random_undirected") return TopologyKind::kRandomRegularUndirected;
  if (name == "ring") return TopologyKind::kRing;
  if (name == "complete") return TopologyKind::kComplete;
  if (name == "file") return TopologyKind::kFromFile;
  throw ConfigError("unknown topology kind '" + name + "'");
}

// ---------------------------------------------------------------------------
// MixingMatrix

MixingMatrix::MixingMatrix(std::size_t m, MixingScheme scheme,
                           std::vector<double> weights)
    : m_(m), scheme_(scheme), weights_(std::move(weights)), uniform_rows_(m, 0) {
  if (weights_.size() != m_ * m_) {
    throw ConfigError("mixing matrix: expected " + std::to_string(m_ * m_) +
                      " weights, got " + std::to_string(weights_.size()));
  }
  for (std::size_t i = 0; i < m_; ++i) {
    std::size_t count = 0;
    double value = 0.0;
    bool uniform = true;
    for (std::size_t j = 0; j < m_; ++j) {
      const double w = weights_[i * m_ + j];
      if (w == 0.0) continue;
      if (count == 0) {
        value = w;
      } else if (w != value) {
        uniform = false;
      }
      ++count;
    }
    if (uniform && count > 0 && value == 1.0 / static_cast<double>(count)) {
      uniform_rows_[i] = count;
    }
  }
}

MixingMatrix MixingMatrix::identity(std::size_t m, MixingScheme scheme) {
  std::vector<double> w(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) w[i * m + i] = 1.0;
  return MixingMatrix(m, scheme, std::move(w));
}

bool MixingMatrix::satisfies_scheme(double tol) const {
  for (std::size_t i = 0; i < m_; ++i) {
    if (!((*this)(i, i) > 0.0)) return false;
    for (std::size_t j = 0; j < m_; ++j) {
      const double w = (*this)(i, j);
      if (!(w >= 0.0 && w <= 1.0)) return false;
    }
  }
  auto rows_ok = [&] {
    for (std::size_t i = 0; i < m_; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m_; ++j) s += (*this)(i, j);
      if (std::abs(s - 1.0) > tol) return false;
    }
    return true;
  };
  auto cols_ok = [&] {
    for (std::size_t j = 0; j < m_; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < m_; ++i) s += (*this)(i, j);
      if (std::abs(s - 1.0) > tol) return false;
    }
    return true;
  };
  switch (scheme_) {
    case MixingScheme::kPushColumnStochastic:
      return cols_ok();
    case MixingScheme::kPullRowStochastic:
      return rows_ok();
    case MixingScheme::kDoublyStochastic:
      for (std::size_t i = 0; i < m_; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
          if ((*this)(i, j) != (*this)(j, i)) return false;
        }
      }
      return rows_ok() && cols_ok();
  }
  return false;
}

// ---------------------------------------------------------------------------
// Schedules

namespace {

DirectedGraph random_directed(std::size_t m, std::size_t degree, Rng& rng) {
  std::vector<std::vector<std::size_t>> out(m);
  std::vector<std::size_t> others;
  others.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    others.clear();
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i) others.push_back(j);
    }
    // Partial Fisher-Yates: the first `degree` slots are a uniform sample.
    for (std::size_t k = 0; k < degree; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, others.size() - 1);
      std::swap(others[k], others[pick(rng)]);
    }
    out[i].assign(others.begin(), others.begin() + static_cast<long>(degree));
  }
  return DirectedGraph(m, std::move(out));
}

// Random simple d-regular undirected graph by incremental random pairing of
// half-edges, restarting when the remaining half-edges admit no legal pair.
DirectedGraph random_undirected(std::size_t m, std::size_t degree, Rng& rng) {
  constexpr int kMaxRestarts = 10000;
  for (int attempt = 0; attempt < kMaxRestarts; ++attempt) {
    std::vector<std::size_t> points;
    points.reserve(m * degree);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t k = 0; k < degree; ++k) points.push_back(i);
    }
    std::set<std::pair<std::size_t, std::size_t>> edges;
    auto legal = [&](std::size_t a, std::size_t b) {
      return a != b && !edges.contains({std::min(a, b), std::max(a, b)});
    };
    bool stuck = false;
    while (!points.empty() && !stuck) {
      std::uniform_int_distribution<std::size_t> pick(0, points.size() - 1);
      bool paired = false;
      for (int tries = 0; tries < 64 && !paired; ++tries) {
        std::size_t x = pick(rng);
        std::size_t y = pick(rng);
        if (x == y || !legal(points[x], points[y])) continue;
        edges.insert({std::min(points[x], points[y]), std::max(points[x], points[y])});
        if (x < y) std::swap(x, y);
        points.erase(points.begin() + static_cast<long>(x));
        points.erase(points.begin() + static_cast<long>(y));
        paired = true;
      }
      if (paired) continue;
      std::vector<std::pair<std::size_t, std::size_t>> candidates;
      for (std::size_t x = 0; x < points.size(); ++x) {
        for (std::size_t y = x + 1; y < points.size(); ++y) {
          if (legal(points[x], points[y])) candidates.emplace_back(y, x);
        }
      }
      if (candidates.empty()) {
        stuck = true;
        break;
      }
      std::uniform_int_distribution<std::size_t> pick_c(0, candidates.size() - 1);
      auto [y, x] = candidates[pick_c(rng)];
      edges.insert({std::min(points[x], points[y]), std::max(points[x], points[y])});
      points.erase(points.begin() + static_cast<long>(y));
      points.erase(points.begin() + static_cast<long>(x));
    }
    if (stuck) continue;
    std::vector<std::vector<std::size_t>> out(m);
    for (auto [a, b] : edges) {
      out[a].push_back(b);
      out[b].push_back(a);
    }
    return DirectedGraph(m, std::move(out));
  }
  throw ConfigError("random_undirected: failed to sample a " +
                    std::to_string(degree) + "-regular graph on " +
                    std::to_string(m) + " clients");
}

}  // namespace

TopologySchedule::TopologySchedule(std::size_t m, TopologyKind kind,
                                   std::size_t degree, std::uint64_t seed,
                                   std::size_t window)
    : m_(m), kind_(kind), degree_(degree), seed_(seed), window_(window) {
  if (m_ == 0) throw ConfigError("topology: client count must be positive");
  if (window_ == 0) throw ConfigError("topology: window B must be >= 1");
  if (kind_ == TopologyKind::kFromFile) {
    throw ConfigError("topology: file schedules are built with from_rounds()");
  }
  if (kind_ == TopologyKind::kRandomRegularDirected ||
      kind_ == TopologyKind::kRandomRegularUndirected) {
    if (degree_ > m_ - 1) {
      throw ConfigError("topology: degree " + std::to_string(degree_) +
                        " exceeds m-1 = " + std::to_string(m_ - 1));
    }
  }
  if (kind_ == TopologyKind::kRandomRegularUndirected && (m_ * degree_) % 2 != 0) {
    throw ConfigError("topology: m * degree must be even for a regular undirected graph");
  }
}

TopologySchedule TopologySchedule::from_rounds(std::size_t m,
                                               std::vector<DirectedGraph> rounds,
                                               std::size_t window) {
  if (rounds.empty()) throw ConfigError("topology file: no rounds");
  for (const auto& g : rounds) {
    if (g.size() != m) {
      throw ConfigError("topology file: graph size " + std::to_string(g.size()) +
                        " does not match m=" + std::to_string(m));
    }
  }
  TopologySchedule s(m, TopologyKind::kComplete, 0, 0, window);
  s.kind_ = TopologyKind::kFromFile;
  s.file_rounds_ = std::move(rounds);
  return s;
}

DirectedGraph TopologySchedule::graph(std::size_t round) const {
  switch (kind_) {
    case TopologyKind::kComplete: {
      std::vector<std::vector<std::size_t>> out(m_);
      for (std::size_t i = 0; i < m_; ++i) {
        for (std::size_t j = 0; j < m_; ++j) {
          if (j != i) out[i].push_back(j);
        }
      }
      return DirectedGraph(m_, std::move(out));
    }
    case TopologyKind::kRing: {
      std::vector<std::vector<std::size_t>> out(m_);
      if (m_ > 1) {
        for (std::size_t i = 0; i < m_; ++i) out[i].push_back((i + 1) % m_);
      }
      return DirectedGraph(m_, std::move(out));
    }
    case TopologyKind::kRandomRegularDirected: {
      Rng rng = make_stream(seed_, Purpose::kTopology, 0, round);
      return random_directed(m_, degree_, rng);
    }
    case TopologyKind::kRandomRegularUndirected: {
      Rng rng = make_stream(seed_, Purpose::kTopology, 1, round);
      return random_undirected(m_, degree_, rng);
    }
    case TopologyKind::kFromFile:
      return file_rounds_[round % file_rounds_.size()];
  }
  return DirectedGraph(m_);
}

DirectedGraph generate_round_topology(const TopologySchedule& schedule,
                                      std::size_t round) {
  return schedule.graph(round);
}

MixingMatrix build_mixing_matrix(const DirectedGraph& graph, MixingScheme scheme) {
  const std::size_t m = graph.size();
  std::vector<double> w(m * m, 0.0);
  switch (scheme) {
    case MixingScheme::kPullRowStochastic:
      for (std::size_t i = 0; i < m; ++i) {
        const auto& in = graph.in_neighbors(i);
        const double p = 1.0 / static_cast<double>(in.size() + 1);
        w[i * m + i] = p;
        for (std::size_t j : in) w[i * m + j] = p;
      }
      break;
    case MixingScheme::kPushColumnStochastic:
      for (std::size_t i = 0; i < m; ++i) {
        const auto& out = graph.out_neighbors(i);
        const double p = 1.0 / static_cast<double>(out.size() + 1);
        w[i * m + i] = p;
        for (std::size_t j : out) w[j * m + i] = p;
      }
      break;
    case MixingScheme::kDoublyStochastic: {
      if (!graph.is_symmetric()) {
        throw SchemeError("doubly-stochastic mixing requires a symmetric graph");
      }
      // Metropolis-Hastings weights.
      for (std::size_t i = 0; i < m; ++i) {
        const double di = static_cast<double>(graph.out_neighbors(i).size());
        for (std::size_t j : graph.out_neighbors(i)) {
          const double dj = static_cast<double>(graph.out_neighbors(j).size());
          w[i * m + j] = 1.0 / (1.0 + std::max(di, dj));
        }
      }
      for (std::size_t i = 0; i < m; ++i) {
        double off = 0.0;
        for (std::size_t j : graph.out_neighbors(i)) off += w[i * m + j];
        w[i * m + i] = 1.0 - off;
      }
      break;
    }
  }
  return MixingMatrix(m, scheme, std::move(w));
}

DirectedGraph union_graph(std::span<const DirectedGraph> graphs) {
  if (graphs.empty()) throw ConfigError("union_graph: empty graph list");
  const std::size_t m = graphs.front().size();
  std::vector<std::vector<std::size_t>> out(m);
  for (const auto& g : graphs) {
    if (g.size() != m) {
      throw ConfigError("union_graph: mismatched client counts " +
                        std::to_string(m) + " and " + std::to_string(g.size()));
    }
    for (std::size_t i = 0; i < m; ++i) {
      const auto& list = g.out_neighbors(i);
      out[i].insert(out[i].end(), list.begin(), list.end());
    }
  }
  return DirectedGraph(m, std::move(out));
}

bool is_strongly_connected(const DirectedGraph& graph) {
  const std::size_t m = graph.size();
  if (m <= 1) return true;
  auto reaches_all = [&](bool forward) {
    std::vector<char> seen(m, 0);
    std::vector<std::size_t> stack{0};
    seen[0] = 1;
    std::size_t count = 1;
    while (!stack.empty()) {
      const std::size_t v = stack.back();
      stack.pop_back();
      const auto& next = forward ? graph.out_neighbors(v) : graph.in_neighbors(v);
      for (std::size_t w : next) {
        if (!seen[w]) {
          seen[w] = 1;
          ++count;
          stack.push_back(w);
        }
      }
    }
    return count == m;
  };
  return reaches_all(true) && reaches_all(false);
}

bool check_window_connectivity(const TopologySchedule& schedule,
                               std::size_t start_round, std::size_t window) {
  if (window == 0) throw ConfigError("check_window_connectivity: B must be >= 1");
  std::vector<DirectedGraph> graphs;
  graphs.reserve(window);
  for (std::size_t t = start_round; t < start_round + window; ++t) {
    graphs.push_back(schedule.graph(t));
  }
  return is_strongly_connected(union_graph(graphs));
}

// ---------------------------------------------------------------------------
// File format

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::size_t parse_index(const std::string& text, std::size_t line_no) {
  const std::string t = trim(text);
  if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("topology file line " + std::to_string(line_no) +
                      ": bad client index '" + t + "'");
  }
  return std::stoul(t);
}

}  // namespace

std::vector<DirectedGraph> parse_topology_file(std::istream& in, std::size_t m) {
  std::map<std::size_t, std::vector<std::pair<std::size_t, std::size_t>>> rounds;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("topology file line " + std::to_string(line_no) +
                        ": missing ':'");
    }
    const std::size_t round = parse_index(line.substr(0, colon), line_no);
    if (rounds.contains(round)) {
      throw ConfigError("topology file line " + std::to_string(line_no) +
                        ": duplicate round " + std::to_string(round));
    }
    auto& edges = rounds[round];
    std::stringstream rest(line.substr(colon + 1));
    std::string item;
    while (std::getline(rest, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      const auto arrow = item.find("->");
      if (arrow == std::string::npos) {
        throw ConfigError("topology file line " + std::to_string(line_no) +
                          ": expected 'i->j', got '" + item + "'");
      }
      const std::size_t from = parse_index(item.substr(0, arrow), line_no);
      const std::size_t to = parse_index(item.substr(arrow + 2), line_no);
      if (from >= m || to >= m) {
        throw ConfigError("topology file line " + std::to_string(line_no) +
                          ": edge " + item + " out of range for m=" +
                          std::to_string(m));
      }
      if (from == to) {
        throw ConfigError("topology file line " + std::to_string(line_no) +
                          ": self-loop " + item);
      }
      edges.emplace_back(from, to);
    }
  }
  if (rounds.empty()) throw ConfigError("topology file: no rounds");
  const std::size_t count = rounds.rbegin()->first + 1;
  std::vector<DirectedGraph> graphs(count, DirectedGraph(m));
  for (const auto& [round, edges] : rounds) {
    graphs[round] = DirectedGraph::from_edges(m, edges);
  }
  return graphs;
}

std::vector<DirectedGraph> load_topology_file(const std::string& path,
                                              std::size_t m) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open topology file '" + path + "'");
  return parse_topology_file(in, m);
}

void write_topology_file(std::ostream& out, std::span<const DirectedGraph> rounds) {
  for (std::size_t t = 0; t < rounds.size(); ++t) {
    out << t << ':';
    bool first = true;
    for (std::size_t i = 0; i < rounds[t].size(); ++i) {
      for (std::size_t j : rounds[t].out_neighbors(i)) {
        out << (first ? " " : ", ") << i << "->" << j;
        first = false;
      }
    }
    out << '\n';
  }
}

}  // namespace dfedpgp
