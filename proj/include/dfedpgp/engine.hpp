#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dfedpgp/algorithms.hpp"
#include "dfedpgp/data.hpp"
#include "dfedpgp/model.hpp"
#include "dfedpgp/topology.hpp"

namespace dfedpgp {

enum class ObjectiveKind { kMlp, kQuadratic };

struct ModelConfig {
  ObjectiveKind kind = ObjectiveKind::kMlp;
  ModelSpec mlp;
  // Quadratic objective widths; data.dim must equal their sum.
  std::size_t shared_dim = 8;
  std::size_t personal_dim = 2;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct PlanConfig {
  double eta_u = 0.1;
  std::optional<double> eta_v;  // defaults to eta_u
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t epochs_u = 5;
  std::size_t epochs_v = 1;
  // Explicit step counts; 0 means epochs * ceil(n_train / batch_size).
  std::size_t steps_u = 0;
  std::size_t steps_v = 0;

  friend bool operator==(const PlanConfig&, const PlanConfig&) = default;
};

enum class PartitionKind { kDirichlet, kPathological };

struct DataConfig {
  PoolParams pool;
  PartitionKind partition = PartitionKind::kDirichlet;
  double alpha = 0.3;
  std::size_t classes_per_client = 2;
  double test_fraction = 0.2;

  PartitionSpec partition_spec(std::size_t clients) const;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct TopologyConfig {
  TopologyKind kind = TopologyKind::kRandomRegularDirected;
  std::size_t degree = 4;
  std::size_t window = 1;
  MixingScheme scheme = MixingScheme::kPullRowStochastic;
  std::string file;

  friend bool operator==(const TopologyConfig&, const TopologyConfig&) = default;
};

struct HeterogeneityGroup {
  double fraction = 1.0;
  std::size_t multiplier = 1;

  friend bool operator==(const HeterogeneityGroup&, const HeterogeneityGroup&) = default;
};

struct MetricsConfig {
  std::size_t cadence = 0;  // 0: every round up to 200 rounds, else every 5
  std::vector<double> targets{0.5, 0.6, 0.7, 0.8, 0.9};

  friend bool operator==(const MetricsConfig&, const MetricsConfig&) = default;
};

struct ExperimentConfig {
  Algorithm algorithm = Algorithm::kDFedPGP;
  std::size_t clients = 20;
  std::size_t rounds = 100;
  std::uint64_t seed = 1;
  double lr_decay = 0.99;
  std::size_t threads = 1;
  bool per_client_init = false;
  ModelConfig model;
  PlanConfig plan;
  DataConfig data;
  TopologyConfig topology;
  std::vector<HeterogeneityGroup> heterogeneity{HeterogeneityGroup{}};
  MetricsConfig metrics;

  /// Throws ConfigError on any inconsistency.
  void validate() const;
  std::size_t effective_cadence() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

struct RoundMetrics {
  std::size_t round = 0;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double mean_loss = 0.0;
  double delta_u = 0.0;
  double delta_v = 0.0;
  double spread = 0.0;
  double lr_u = 0.0;
  double lr_v = 0.0;
  double wall_ms = 0.0;
};

struct TargetRounds {
  double target = 0.0;
  std::optional<std::size_t> round;
};

struct ExperimentResult {
  std::vector<RoundMetrics> metrics;
  std::vector<double> client_accuracy;  // NaN for clients without test data
  double initial_accuracy = 0.0;
  double final_accuracy = 0.0;
  std::vector<TargetRounds> rounds_to_target;
  std::vector<std::string> warnings;
  std::vector<ClientState> final_states;
};

/// Everything a run needs besides the client states.
struct ExperimentSetup {
  GlobalPool pool;
  std::vector<ClientShard> shards;
  std::unique_ptr<Objective> objective;
  std::unique_ptr<TopologySchedule> schedule;
  MixingScheme scheme = MixingScheme::kPullRowStochastic;
  std::vector<std::size_t> multipliers;
  std::vector<ClientState> initial_states;
};

ExperimentSetup make_setup(const ExperimentConfig& config);

/// Per-client plans for one round with the decayed learning rates.
std::vector<LocalPlan> make_plans(const ExperimentConfig& config,
                                  const ExperimentSetup& setup, std::size_t round);

TopologySchedule make_schedule(const ExperimentConfig& config);

/// Copy of `base` running `algorithm`. Undirected algorithms get the
/// undirected counterpart of a random directed topology (same degree).
ExperimentConfig with_algorithm(const ExperimentConfig& base, Algorithm algorithm);

/// Ablation order: DFedPGP, DFedAvgM-P, OSGP, DFedAvgM, Local.
inline constexpr Algorithm kAblationAlgorithms[] = {
    Algorithm::kDFedPGP, Algorithm::kDFedAvgMP, Algorithm::kOSGP,
    Algorithm::kDFedAvgM, Algorithm::kLocal};

ExperimentResult run_experiment(const ExperimentConfig& config);

/// |(1/m) sum_i grad_u F_i(u_bar, v_i)|^2 with u_bar the mean of the biased
/// shared parts and full train shards.
double compute_delta_u(std::span<const ClientState> states, const Objective& objective,
                       std::span<const ClientShard> shards, std::size_t threads = 1);

/// (1/m) sum_i |grad_v F_i(z_i, v_i)|^2 over full train shards.
double compute_delta_v(std::span<const ClientState> states, const Objective& objective,
                       std::span<const ClientShard> shards, std::size_t threads = 1);

RoundMetrics compute_metrics(std::span<const ClientState> states,
                             const Objective& objective,
                             std::span<const ClientShard> shards, std::size_t threads,
                             std::vector<double>* client_accuracy = nullptr);

/// Clients shuffled then sliced by cumulative fraction; returns each
/// client's epoch multiplier.
std::vector<std::size_t> assign_heterogeneity(std::size_t clients,
                                              std::span<const HeterogeneityGroup> groups,
                                              std::uint64_t seed);

/// First recorded round whose mean accuracy reaches `target`.
std::optional<std::size_t> rounds_to_target(std::span<const RoundMetrics> metrics,
                                            double target);

}  // namespace dfedpgp
