#pragma once

// Helpers shared by the test binaries. Oracles here are deliberately naive
// and do not call into the library code they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dfedpgp/model.hpp"
#include "dfedpgp/param_vector.hpp"
#include "dfedpgp/topology.hpp"

namespace testing {

using dfedpgp::Batch;
using dfedpgp::DirectedGraph;
using dfedpgp::ParamVector;

inline std::vector<std::vector<bool>> adjacency(const DirectedGraph& g) {
  const std::size_t m = g.size();
  std::vector<std::vector<bool>> a(m, std::vector<bool>(m, false));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j : g.out_neighbors(i)) a[i][j] = true;
  }
  return a;
}

// Floyd-Warshall transitive closure: every node reaches every other node.
inline bool reachability_oracle(const std::vector<std::vector<bool>>& adj) {
  const std::size_t m = adj.size();
  auto r = adj;
  for (std::size_t i = 0; i < m; ++i) r[i][i] = true;
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t i = 0; i < m; ++i) {
      if (!r[i][k]) continue;
      for (std::size_t j = 0; j < m; ++j) {
        if (r[k][j]) r[i][j] = true;
      }
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (!r[i][j]) return false;
    }
  }
  return true;
}

inline DirectedGraph random_digraph(std::size_t m, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(p);
  std::vector<std::vector<std::size_t>> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i != j && coin(rng)) out[i].push_back(j);
    }
  }
  return DirectedGraph(m, std::move(out));
}

inline ParamVector random_vector(std::size_t n, std::mt19937_64& rng,
                                 double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  ParamVector x(n);
  for (double& c : x) c = d(rng);
  return x;
}

inline Batch random_batch(std::size_t n, std::size_t dim, int classes,
                          std::mt19937_64& rng) {
  Batch b;
  b.dim = dim;
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, classes - 1);
  std::vector<double> x(dim);
  for (std::size_t s = 0; s < n; ++s) {
    for (double& c : x) c = g(rng);
    b.push_back(x.data(), label(rng));
  }
  return b;
}

// FNV-1a over the raw bytes of a vector of doubles.
inline std::uint64_t hash_bytes(std::span<const double> xs) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double x : xs) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &x, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

inline double max_abs_diff(const ParamVector& a, const ParamVector& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() /
           ("dfedpgp_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace testing
