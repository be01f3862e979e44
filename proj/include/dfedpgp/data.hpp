#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include "dfedpgp/model.hpp"

namespace dfedpgp {

/// Labeled synthetic samples. Sample k * per_class + s belongs to class k.
struct GlobalPool {
  std::size_t classes = 0;
  Batch samples;

  std::size_t size() const { return samples.size(); }
  std::size_t dim() const { return samples.dim; }
  int label(std::size_t i) const { return samples.labels[i]; }
};

struct PoolParams {
  std::size_t classes = 10;
  std::size_t dim = 32;
  std::size_t per_class = 200;
  double radius = 2.0;
  double noise = 1.0;

  friend bool operator==(const PoolParams&, const PoolParams&) = default;
};

/// Class means uniform on the radius-r sphere, samples = mean + N(0, noise^2 I).
GlobalPool generate_pool(const PoolParams& params, std::uint64_t seed);

/// Z-scores every feature over the whole pool; constant features are only
/// centered.
void standardize_features(GlobalPool& pool);

struct DirichletSplit {
  double alpha = 0.3;
  friend bool operator==(const DirichletSplit&, const DirichletSplit&) = default;
};

struct PathologicalSplit {
  std::size_t classes_per_client = 2;
  friend bool operator==(const PathologicalSplit&, const PathologicalSplit&) = default;
};

struct PartitionSpec {
  std::variant<DirichletSplit, PathologicalSplit> kind = DirichletSplit{};
  std::size_t clients = 20;
  double test_fraction = 0.2;

  friend bool operator==(const PartitionSpec&, const PartitionSpec&) = default;
};

/// assignment[i] lists the pool indices owned by client i.
using Assignment = std::vector<std::vector<std::size_t>>;

Assignment dirichlet_partition(const GlobalPool& pool, std::size_t clients,
                               double alpha, std::uint64_t seed);

Assignment pathological_partition(const GlobalPool& pool, std::size_t clients,
                                  std::size_t classes_per_client,
                                  std::uint64_t seed);

Assignment partition(const GlobalPool& pool, const PartitionSpec& spec,
                     std::uint64_t seed);

struct ClientShard {
  Batch train;
  Batch test;
  std::vector<std::size_t> train_index;
  std::vector<std::size_t> test_index;
};

/// Per-client, per-label split; round(n_k * test_fraction) of each label goes
/// to test, always leaving at least one sample of the label in train. A
/// client with two or more samples but an empty test split moves one sample
/// of its largest label to test.
std::vector<ClientShard> split_shards(const GlobalPool& pool,
                                      const Assignment& assignment,
                                      double test_fraction, std::uint64_t seed);

/// Per-client label counts over train + test; rows are clients.
std::vector<std::vector<std::size_t>> class_counts(
    const std::vector<ClientShard>& shards, std::size_t classes);

/// Shannon entropy (nats) of a count histogram; 0 for an empty one.
double label_entropy(const std::vector<std::size_t>& counts);

/// CSV with header `index,label,f0..f{d-1}`.
void write_shard_csv(std::ostream& out, const std::vector<std::size_t>& index,
                     const Batch& batch);
void read_shard_csv(std::istream& in, std::vector<std::size_t>& index, Batch& batch);

}  // namespace dfedpgp
