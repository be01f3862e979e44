#include "dfedpgp/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

#include "dfedpgp/error.hpp"
#include "dfedpgp/rng.hpp"

namespace dfedpgp {

GlobalPool generate_pool(const PoolParams& params, std::uint64_t seed) {
  if (params.classes == 0 || params.dim == 0 || params.per_class == 0) {
    throw ConfigError("generate_pool: classes, dim and per_class must be positive");
  }
  if (!(params.radius > 0.0) || !(params.noise >= 0.0)) {
    throw ConfigError("generate_pool: radius must be positive and noise nonnegative");
  }
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t d = params.dim;

  std::vector<double> means(params.classes * d);
  for (std::size_t k = 0; k < params.classes; ++k) {
    double* mean = means.data() + k * d;
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        mean[j] = gauss(rng);
        norm2 += mean[j] * mean[j];
      }
    } while (norm2 == 0.0);
    const double scale = params.radius / std::sqrt(norm2);
    for (std::size_t j = 0; j < d; ++j) mean[j] *= scale;
  }

  GlobalPool pool;
  pool.classes = params.classes;
  pool.samples.dim = d;
  pool.samples.features.reserve(params.classes * params.per_class * d);
  pool.samples.labels.reserve(params.classes * params.per_class);
  std::vector<double> x(d);
  for (std::size_t k = 0; k < params.classes; ++k) {
    const double* mean = means.data() + k * d;
    for (std::size_t s = 0; s < params.per_class; ++s) {
      for (std::size_t j = 0; j < d; ++j) {
        x[j] = mean[j] + params.noise * gauss(rng);
      }
      pool.samples.push_back(x.data(), static_cast<int>(k));
    }
  }
  return pool;
}

void standardize_features(GlobalPool& pool) {
  const std::size_t n = pool.size();
  const std::size_t d = pool.dim();
  if (n == 0) return;
  auto& f = pool.samples.features;
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t s = 0; s < n; ++s) mean += f[s * d + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const double c = f[s * d + j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var);
    for (std::size_t s = 0; s < n; ++s) {
      f[s * d + j] -= mean;
      if (sd > 0.0) f[s * d + j] /= sd;
    }
  }
}

namespace {

std::vector<std::vector<std::size_t>> indices_by_class(const GlobalPool& pool) {
  std::vector<std::vector<std::size_t>> by_class(pool.classes);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    by_class[static_cast<std::size_t>(pool.label(i))].push_back(i);
  }
  return by_class;
}

}  // namespace

Assignment dirichlet_partition(const GlobalPool& pool, std::size_t clients,
                               double alpha, std::uint64_t seed) {
  if (clients == 0) throw ConfigError("dirichlet_partition: clients must be positive");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw ConfigError("dirichlet_partition: alpha must be positive");
  }
  if (pool.size() < clients) {
    throw ConfigError("dirichlet_partition: " + std::to_string(pool.size()) +
                      " samples cannot cover " + std::to_string(clients) +
                      " clients");
  }
  Rng rng(seed);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  Assignment assignment(clients);
  auto by_class = indices_by_class(pool);
  std::vector<double> p(clients);
  for (auto& idx : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    double total = 0.0;
    for (double& x : p) {
      x = gamma(rng);
      total += x;
    }
    if (!(total > 0.0)) {
      // Every draw underflowed; the limit of Dir(alpha) as alpha -> 0 is a
      // vertex of the simplex.
      std::fill(p.begin(), p.end(), 0.0);
      std::uniform_int_distribution<std::size_t> pick(0, clients - 1);
      p[pick(rng)] = 1.0;
      total = 1.0;
    }
    // Split the shuffled class at the cumulative proportions.
    const double n = static_cast<double>(idx.size());
    double cum = 0.0;
    std::size_t start = 0;
    for (std::size_t i = 0; i < clients; ++i) {
      cum += p[i] / total;
      std::size_t end = i + 1 == clients
                            ? idx.size()
                            : std::min(idx.size(), static_cast<std::size_t>(
                                                       std::floor(cum * n)));
      end = std::max(end, start);
      assignment[i].insert(assignment[i].end(), idx.begin() + static_cast<long>(start),
                           idx.begin() + static_cast<long>(end));
      start = end;
    }
  }
  // Empty-client repair: move one random sample from the largest client.
  for (std::size_t i = 0; i < clients; ++i) {
    if (!assignment[i].empty()) continue;
    auto largest = std::max_element(
        assignment.begin(), assignment.end(),
        [](const auto& a, const auto& b) { return a.size() < b.size(); });
    std::uniform_int_distribution<std::size_t> pick(0, largest->size() - 1);
    const std::size_t k = pick(rng);
    assignment[i].push_back((*largest)[k]);
    largest->erase(largest->begin() + static_cast<long>(k));
  }
  for (auto& a : assignment) std::sort(a.begin(), a.end());
  return assignment;
}

Assignment pathological_partition(const GlobalPool& pool, std::size_t clients,
                                  std::size_t classes_per_client,
                                  std::uint64_t seed) {
  const std::size_t classes = pool.classes;
  if (clients == 0) throw ConfigError("pathological_partition: clients must be positive");
  if (classes_per_client == 0 || classes_per_client > classes) {
    throw ConfigError("pathological_partition: classes_per_client must be in [1, " +
                      std::to_string(classes) + "]");
  }
  if (clients * classes_per_client < classes) {
    throw ConfigError("pathological_partition: " + std::to_string(clients) +
                      " clients x " + std::to_string(classes_per_client) +
                      " classes cannot cover " + std::to_string(classes) +
                      " classes");
  }
  Rng rng(seed);
  std::vector<std::size_t> order(classes);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  // Round-robin over the shuffled class order: c consecutive slots mod C are
  // distinct, and each class receives floor or ceil of m*c/C clients.
  std::vector<std::vector<std::size_t>> owners(classes);
  for (std::size_t i = 0; i < clients; ++i) {
    for (std::size_t j = 0; j < classes_per_client; ++j) {
      owners[order[(i * classes_per_client + j) % classes]].push_back(i);
    }
  }
  Assignment assignment(clients);
  auto by_class = indices_by_class(pool);
  for (std::size_t k = 0; k < classes; ++k) {
    auto& idx = by_class[k];
    const auto& who = owners[k];
    if (idx.size() < who.size()) {
      throw ConfigError("pathological_partition: class " + std::to_string(k) +
                        " has " + std::to_string(idx.size()) +
                        " samples for " + std::to_string(who.size()) + " clients");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t base = idx.size() / who.size();
    const std::size_t extra = idx.size() % who.size();
    std::size_t start = 0;
    for (std::size_t r = 0; r < who.size(); ++r) {
      const std::size_t len = base + (r < extra ? 1 : 0);
      auto& dst = assignment[who[r]];
      dst.insert(dst.end(), idx.begin() + static_cast<long>(start),
                 idx.begin() + static_cast<long>(start + len));
      start += len;
    }
  }
  for (auto& a : assignment) std::sort(a.begin(), a.end());
  return assignment;
}

Assignment partition(const GlobalPool& pool, const PartitionSpec& spec,
                     std::uint64_t seed) {
  if (const auto* d = std::get_if<DirichletSplit>(&spec.kind)) {
    return dirichlet_partition(pool, spec.clients, d->alpha, seed);
  }
  const auto& p = std::get<PathologicalSplit>(spec.kind);
  return pathological_partition(pool, spec.clients, p.classes_per_client, seed);
}

std::vector<ClientShard> split_shards(const GlobalPool& pool,
                                      const Assignment& assignment,
                                      double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("split_shards: test_fraction must be in (0, 1)");
  }
  std::vector<ClientShard> shards(assignment.size());
  for (std::size_t c = 0; c < assignment.size(); ++c) {
    Rng rng = make_stream(seed, Purpose::kSplit, c);
    std::vector<std::vector<std::size_t>> groups(pool.classes);
    for (std::size_t i : assignment[c]) {
      if (i >= pool.size()) {
        throw ConfigError("split_shards: index " + std::to_string(i) +
                          " outside the pool");
      }
      groups[static_cast<std::size_t>(pool.label(i))].push_back(i);
    }
    std::vector<std::size_t> test_count(pool.classes, 0);
    std::size_t total = 0;
    std::size_t total_test = 0;
    for (std::size_t k = 0; k < pool.classes; ++k) {
      auto& g = groups[k];
      std::shuffle(g.begin(), g.end(), rng);
      if (g.empty()) continue;
      const auto want = static_cast<std::size_t>(
          std::llround(static_cast<double>(g.size()) * test_fraction));
      test_count[k] = std::min(want, g.size() - 1);
      total += g.size();
      total_test += test_count[k];
    }
    if (total_test == 0 && total >= 2) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < pool.classes; ++k) {
        if (groups[k].size() > groups[best].size()) best = k;
      }
      if (groups[best].size() >= 2) test_count[best] = 1;
    }
    ClientShard& shard = shards[c];
    shard.train.dim = shard.test.dim = pool.dim();
    for (std::size_t k = 0; k < pool.classes; ++k) {
      const auto& g = groups[k];
      for (std::size_t r = 0; r < g.size(); ++r) {
        const std::size_t i = g[r];
        if (r < test_count[k]) {
          shard.test_index.push_back(i);
        } else {
          shard.train_index.push_back(i);
        }
      }
    }
    std::sort(shard.train_index.begin(), shard.train_index.end());
    std::sort(shard.test_index.begin(), shard.test_index.end());
    for (std::size_t i : shard.train_index) {
      shard.train.push_back(pool.samples.row(i), pool.label(i));
    }
    for (std::size_t i : shard.test_index) {
      shard.test.push_back(pool.samples.row(i), pool.label(i));
    }
  }
  return shards;
}

std::vector<std::vector<std::size_t>> class_counts(
    const std::vector<ClientShard>& shards, std::size_t classes) {
  std::vector<std::vector<std::size_t>> counts(shards.size(),
                                               std::vector<std::size_t>(classes, 0));
  for (std::size_t c = 0; c < shards.size(); ++c) {
    for (int y : shards[c].train.labels) ++counts[c][static_cast<std::size_t>(y)];
    for (int y : shards[c].test.labels) ++counts[c][static_cast<std::size_t>(y)];
  }
  return counts;
}

double label_entropy(const std::vector<std::size_t>& counts) {
  const double total =
      static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  if (total == 0.0) return 0.0;
  double h = 0.0;
  for (std::size_t n : counts) {
    if (n == 0) continue;
    const double p = static_cast<double>(n) / total;
    h -= p * std::log(p);
  }
  return h;
}

void write_shard_csv(std::ostream& out, const std::vector<std::size_t>& index,
                     const Batch& batch) {
  if (index.size() != batch.size()) {
    throw ConfigError("write_shard_csv: index and batch sizes differ");
  }
  out << "index,label";
  for (std::size_t j = 0; j < batch.dim; ++j) out << ",f" << j;
  out << '\n';
  char buf[32];
  for (std::size_t s = 0; s < batch.size(); ++s) {
    out << index[s] << ',' << batch.labels[s];
    const double* x = batch.row(s);
    for (std::size_t j = 0; j < batch.dim; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", x[j]);
      out << ',' << buf;
    }
    out << '\n';
  }
}

void read_shard_csv(std::istream& in, std::vector<std::size_t>& index, Batch& batch) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("shard csv: missing header");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 2 || header[0] != "index" || header[1] != "label") {
    throw ConfigError("shard csv: header must start with index,label");
  }
  const std::size_t dim = header.size() - 2;
  for (std::size_t j = 0; j < dim; ++j) {
    if (header[j + 2] != "f" + std::to_string(j)) {
      throw ConfigError("shard csv: unexpected column '" + header[j + 2] + "'");
    }
  }
  index.clear();
  batch = Batch{};
  batch.dim = dim;
  std::vector<double> x(dim);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != dim + 2) {
      throw ConfigError("shard csv line " + std::to_string(line_no) +
                        ": expected " + std::to_string(dim + 2) + " columns");
    }
    try {
      index.push_back(std::stoull(cells[0]));
      const int label = std::stoi(cells[1]);
      for (std::size_t j = 0; j < dim; ++j) x[j] = std::stod(cells[j + 2]);
      batch.push_back(x.data(), label);
    } catch (const std::logic_error&) {
      throw ConfigError("shard csv line " + std::to_string(line_no) +
                        ": malformed number");
    }
  }
}

}  // namespace dfedpgp
