#include "dfedpgp/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "dfedpgp/consensus.hpp"
#include "dfedpgp/error.hpp"
#include "dfedpgp/parallel.hpp"
#include "dfedpgp/rng.hpp"

namespace dfedpgp {

PartitionSpec DataConfig::partition_spec(std::size_t clients) const {
  PartitionSpec spec;
  spec.clients = clients;
  spec.test_fraction = test_fraction;
  if (partition == PartitionKind::kDirichlet) {
    spec.kind = DirichletSplit{alpha};
  } else {
    spec.kind = PathologicalSplit{classes_per_client};
  }
  return spec;
}

void ExperimentConfig::validate() const {
  if (clients == 0) throw ConfigError("clients must be >= 1");
  if (rounds == 0) throw ConfigError("rounds must be >= 1");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must be in (0, 1]");
  if (threads == 0) throw ConfigError("threads must be >= 1");

  if (model.kind == ObjectiveKind::kMlp) {
    model.mlp.validate();
    if (model.mlp.input_dim() != data.pool.dim) {
      throw ConfigError("model.layer_dims[0] = " + std::to_string(model.mlp.input_dim()) +
                        " must equal data.dim = " + std::to_string(data.pool.dim));
    }
    if (model.mlp.num_classes() != data.pool.classes) {
      throw ConfigError("last entry of model.layer_dims must equal data.classes");
    }
    if (is_partial(algorithm) && model.mlp.personal_size() == 0) {
      throw ConfigError("model.split_layer leaves no personal layers for " +
                        to_string(algorithm));
    }
  } else {
    if (model.shared_dim == 0) throw ConfigError("model.shared_dim must be >= 1");
    if (model.shared_dim + model.personal_dim != data.pool.dim) {
      throw ConfigError("model.shared_dim + model.personal_dim must equal data.dim");
    }
    if (!(model.mlp.weight_decay >= 0.0)) {
      throw ConfigError("model.weight_decay must be nonnegative");
    }
  }

  if (!(plan.eta_u >= 0.0)) throw ConfigError("plan.eta_u must be nonnegative");
  if (plan.eta_v && !(*plan.eta_v >= 0.0)) throw ConfigError("plan.eta_v must be nonnegative");
  if (!(plan.momentum >= 0.0 && plan.momentum < 1.0)) {
    throw ConfigError("plan.momentum must be in [0, 1)");
  }
  if (plan.batch_size == 0) throw ConfigError("plan.batch_size must be >= 1");
  if (plan.steps_u == 0 && plan.epochs_u == 0) {
    throw ConfigError("plan.epochs_u or plan.steps_u must be >= 1");
  }
  if (plan.steps_v == 0 && plan.epochs_v == 0) {
    throw ConfigError("plan.epochs_v or plan.steps_v must be >= 1");
  }

  if (!(data.test_fraction > 0.0 && data.test_fraction < 1.0)) {
    throw ConfigError("data.test_fraction must be in (0, 1)");
  }
  if (data.partition == PartitionKind::kDirichlet && !(data.alpha > 0.0)) {
    throw ConfigError("data.alpha must be positive");
  }

  if (topology.window == 0) throw ConfigError("topology.window must be >= 1");
  if (topology.kind == TopologyKind::kFromFile && topology.file.empty()) {
    throw ConfigError("topology.file is required for kind 'file'");
  }
  if (uses_undirected(algorithm) &&
      (topology.kind == TopologyKind::kRandomRegularDirected ||
       topology.kind == TopologyKind::kRing)) {
    throw ConfigError(to_string(algorithm) +
                      " needs an undirected topology (random_undirected, complete or file)");
  }

  if (heterogeneity.empty()) throw ConfigError("heterogeneity needs at least one group");
  double total = 0.0;
  for (const auto& g : heterogeneity) {
    if (!(g.fraction >= 0.0)) throw ConfigError("heterogeneity fractions must be >= 0");
    if (g.multiplier == 0) throw ConfigError("heterogeneity multipliers must be >= 1");
    total += g.fraction;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("heterogeneity fractions must sum to 1");
  }
  for (double t : metrics.targets) {
    if (!std::isfinite(t)) throw ConfigError("metrics.targets must be finite");
  }
}

std::size_t ExperimentConfig::effective_cadence() const {
  if (metrics.cadence > 0) return metrics.cadence;
  return rounds <= 200 ? 1 : 5;
}

TopologySchedule make_schedule(const ExperimentConfig& config) {
  const std::uint64_t seed = stream_seed(config.seed, Purpose::kTopology);
  if (config.topology.kind == TopologyKind::kFromFile) {
    return TopologySchedule::from_rounds(
        config.clients, load_topology_file(config.topology.file, config.clients),
        config.topology.window);
  }
  return TopologySchedule(config.clients, config.topology.kind, config.topology.degree,
                          seed, config.topology.window);
}

ExperimentConfig with_algorithm(const ExperimentConfig& base, Algorithm algorithm) {
  ExperimentConfig c = base;
  c.algorithm = algorithm;
  if (uses_undirected(algorithm)) {
    if (c.topology.kind == TopologyKind::kRandomRegularDirected) {
      c.topology.kind = TopologyKind::kRandomRegularUndirected;
    } else if (c.topology.kind == TopologyKind::kRing) {
      throw ConfigError(to_string(algorithm) + " cannot run on a directed ring");
    }
  }
  return c;
}

ExperimentSetup make_setup(const ExperimentConfig& config) {
  config.validate();
  ExperimentSetup setup;
  setup.pool = generate_pool(config.data.pool, stream_seed(config.seed, Purpose::kPool));
  standardize_features(setup.pool);
  const auto assignment =
      partition(setup.pool, config.data.partition_spec(config.clients),
                stream_seed(config.seed, Purpose::kPartition));
  setup.shards = split_shards(setup.pool, assignment, config.data.test_fraction,
                              stream_seed(config.seed, Purpose::kSplit));

  const bool partial = is_partial(config.algorithm);
  if (config.model.kind == ObjectiveKind::kMlp) {
    setup.objective = std::make_unique<MlpObjective>(
        partial ? config.model.mlp : config.model.mlp.fully_shared());
  } else if (partial) {
    setup.objective = std::make_unique<QuadraticObjective>(
        config.model.shared_dim, config.model.personal_dim, config.model.mlp.weight_decay);
  } else {
    setup.objective = std::make_unique<QuadraticObjective>(
        config.model.shared_dim + config.model.personal_dim, 0,
        config.model.mlp.weight_decay);
  }

  setup.schedule = std::make_unique<TopologySchedule>(make_schedule(config));
  setup.scheme = uses_undirected(config.algorithm) ? MixingScheme::kDoublyStochastic
                                                   : config.topology.scheme;
  setup.multipliers = assign_heterogeneity(config.clients, config.heterogeneity,
                                           stream_seed(config.seed, Purpose::kHeterogeneity));

  const std::uint64_t init_seed = stream_seed(config.seed, Purpose::kInit);
  setup.initial_states = init_states(*setup.objective, config.clients, init_seed);
  if (config.per_client_init) {
    for (std::size_t i = 0; i < config.clients; ++i) {
      auto [u, v] = setup.objective->init(stream_seed(config.seed, Purpose::kInit, i + 1));
      setup.initial_states[i].cell = PushSumCell(std::move(u));
      setup.initial_states[i].v = std::move(v);
    }
  }
  return setup;
}

std::vector<LocalPlan> make_plans(const ExperimentConfig& config,
                                  const ExperimentSetup& setup, std::size_t round) {
  const double decay = std::pow(config.lr_decay, static_cast<double>(round));
  const double eta_u = config.plan.eta_u * decay;
  const double eta_v = config.plan.eta_v.value_or(config.plan.eta_u) * decay;
  std::vector<LocalPlan> plans(config.clients);
  for (std::size_t i = 0; i < config.clients; ++i) {
    const std::size_t n = setup.shards[i].train.size();
    const std::size_t per_epoch =
        std::max<std::size_t>(1, (n + config.plan.batch_size - 1) / config.plan.batch_size);
    LocalPlan& p = plans[i];
    p.steps_u = config.plan.steps_u > 0 ? config.plan.steps_u : config.plan.epochs_u * per_epoch;
    p.steps_v = config.plan.steps_v > 0 ? config.plan.steps_v : config.plan.epochs_v * per_epoch;
    p.eta_u = eta_u;
    p.eta_v = eta_v;
    p.momentum = config.plan.momentum;
    p.batch_size = config.plan.batch_size;
    p.epoch_multiplier = setup.multipliers[i];
  }
  return plans;
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

ParamVector mean_shared(std::span<const ClientState> states) {
  ParamVector mean(states.empty() ? 0 : states[0].cell.u().size());
  for (const auto& s : states) mean.axpy(1.0, s.cell.u());
  mean.scale(1.0 / static_cast<double>(states.size()));
  return mean;
}

struct ClientMetric {
  bool has_test = false;
  double accuracy = 0.0;
  double loss = 0.0;
  double grad_v_sq = 0.0;
  ParamVector grad_u_at_mean;
};

ClientMetric client_metric(const ClientState& s, const Objective& objective,
                           const ClientShard& shard, const ParamVector& u_bar,
                           bool with_accuracy) {
  ClientMetric cm;
  if (with_accuracy && shard.test.size() > 0) {
    cm.has_test = true;
    cm.accuracy = objective.evaluate(s.cell.z(), s.v, shard.test).accuracy;
  }
  const auto own = objective.loss_and_grads(s.cell.z(), s.v, shard.train);
  cm.loss = own.loss;
  cm.grad_v_sq = own.grad_v.squared_norm();
  cm.grad_u_at_mean = objective.loss_and_grads(u_bar, s.v, shard.train).grad_u;
  return cm;
}

std::vector<ClientMetric> client_metrics(std::span<const ClientState> states,
                                         const Objective& objective,
                                         std::span<const ClientShard> shards,
                                         std::size_t threads, bool with_accuracy) {
  if (states.size() != shards.size() || states.empty()) {
    throw ConfigError("metrics: states and shards must be non-empty and aligned");
  }
  const ParamVector u_bar = mean_shared(states);
  std::vector<ClientMetric> out(states.size());
  parallel_for(states.size(), threads, [&](std::size_t i) {
    out[i] = client_metric(states[i], objective, shards[i], u_bar, with_accuracy);
  });
  return out;
}

double delta_u_from(const std::vector<ClientMetric>& cms) {
  ParamVector g(cms[0].grad_u_at_mean.size());
  for (const auto& cm : cms) g.axpy(1.0, cm.grad_u_at_mean);
  g.scale(1.0 / static_cast<double>(cms.size()));
  return g.squared_norm();
}

double delta_v_from(const std::vector<ClientMetric>& cms) {
  double total = 0.0;
  for (const auto& cm : cms) total += cm.grad_v_sq;
  return total / static_cast<double>(cms.size());
}

}  // namespace

double compute_delta_u(std::span<const ClientState> states, const Objective& objective,
                       std::span<const ClientShard> shards, std::size_t threads) {
  return delta_u_from(client_metrics(states, objective, shards, threads, false));
}

double compute_delta_v(std::span<const ClientState> states, const Objective& objective,
                       std::span<const ClientShard> shards, std::size_t threads) {
  return delta_v_from(client_metrics(states, objective, shards, threads, false));
}

RoundMetrics compute_metrics(std::span<const ClientState> states,
                             const Objective& objective,
                             std::span<const ClientShard> shards, std::size_t threads,
                             std::vector<double>* client_accuracy) {
  const auto cms = client_metrics(states, objective, shards, threads, true);
  RoundMetrics rm;
  double acc_sum = 0.0;
  double loss_sum = 0.0;
  std::size_t evaluated = 0;
  for (const auto& cm : cms) {
    loss_sum += cm.loss;
    if (!cm.has_test) continue;
    acc_sum += cm.accuracy;
    ++evaluated;
  }
  if (evaluated > 0) {
    rm.mean_accuracy = acc_sum / static_cast<double>(evaluated);
    double var = 0.0;
    for (const auto& cm : cms) {
      if (!cm.has_test) continue;
      const double d = cm.accuracy - rm.mean_accuracy;
      var += d * d;
    }
    rm.std_accuracy = std::sqrt(var / static_cast<double>(evaluated));
  }
  rm.mean_loss = loss_sum / static_cast<double>(cms.size());
  rm.delta_u = delta_u_from(cms);
  rm.delta_v = delta_v_from(cms);
  std::vector<PushSumCell> cells;
  cells.reserve(states.size());
  for (const auto& s : states) cells.push_back(s.cell);
  rm.spread = spread(cells);
  if (client_accuracy) {
    client_accuracy->clear();
    for (const auto& cm : cms) {
      client_accuracy->push_back(cm.has_test ? cm.accuracy
                                             : std::numeric_limits<double>::quiet_NaN());
    }
  }
  return rm;
}

std::vector<std::size_t> assign_heterogeneity(std::size_t clients,
                                              std::span<const HeterogeneityGroup> groups,
                                              std::uint64_t seed) {
  if (groups.empty()) throw ConfigError("assign_heterogeneity: no groups");
  double total = 0.0;
  for (const auto& g : groups) total += g.fraction;
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("assign_heterogeneity: fractions must sum to 1");
  }
  std::vector<std::size_t> order(clients);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> multipliers(clients, 1);
  double cum = 0.0;
  std::size_t start = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    cum += groups[g].fraction;
    const std::size_t end =
        g + 1 == groups.size()
            ? clients
            : std::min(clients, static_cast<std::size_t>(
                                    std::llround(cum * static_cast<double>(clients))));
    for (std::size_t k = start; k < std::max(start, end); ++k) {
      multipliers[order[k]] = groups[g].multiplier;
    }
    start = std::max(start, end);
  }
  return multipliers;
}

std::optional<std::size_t> rounds_to_target(std::span<const RoundMetrics> metrics,
                                            double target) {
  for (const auto& m : metrics) {
    if (m.mean_accuracy >= target) return m.round;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

namespace {

template <class E>
[[noreturn]] void rethrow_with_round(const E& e, std::size_t round) {
  throw E("round " + std::to_string(round) + ": " + e.what());
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  using Clock = std::chrono::steady_clock;
  ExperimentSetup setup = make_setup(config);
  ExperimentResult result;

  if (config.algorithm != Algorithm::kLocal) {
    for (std::size_t w = 0; w < 3; ++w) {
      const std::size_t start = w * config.topology.window;
      if (!check_window_connectivity(*setup.schedule, start, config.topology.window)) {
        result.warnings.push_back("topology window starting at round " +
                                  std::to_string(start) + " (B=" +
                                  std::to_string(config.topology.window) +
                                  ") is not strongly connected");
      }
    }
  }

  std::vector<ClientState> states = setup.initial_states;
  const std::size_t cadence = config.effective_cadence();
  const double eta_v0 = config.plan.eta_v.value_or(config.plan.eta_u);

  auto record = [&](std::size_t round, double lr_u, double lr_v, double ms,
                    std::vector<double>* acc) {
    RoundMetrics rm = compute_metrics(states, *setup.objective, setup.shards,
                                      config.threads, acc);
    rm.round = round;
    rm.lr_u = lr_u;
    rm.lr_v = lr_v;
    rm.wall_ms = ms;
    for (double x : {rm.mean_accuracy, rm.std_accuracy, rm.mean_loss, rm.delta_u,
                     rm.delta_v, rm.spread}) {
      if (!std::isfinite(x)) {
        throw DivergenceError("round " + std::to_string(round) + ": non-finite metric");
      }
    }
    result.metrics.push_back(rm);
  };

  record(0, config.plan.eta_u, eta_v0, 0.0, nullptr);

  const auto start = Clock::now();
  for (std::size_t t = 0; t < config.rounds; ++t) {
    const auto plans = make_plans(config, setup, t);
    RoundContext ctx;
    ctx.seed = config.seed;
    ctx.round = t;
    ctx.threads = config.threads;
    try {
      run_round(config.algorithm, states, plans, *setup.objective, setup.shards,
                *setup.schedule, setup.scheme, ctx);
    } catch (const ProtocolError& e) {
      rethrow_with_round(e, t);
    } catch (const DivergenceError& e) {
      rethrow_with_round(e, t);
    } catch (const NumericError& e) {
      rethrow_with_round(e, t);
    }
    const bool last = t + 1 == config.rounds;
    if (last || (t + 1) % cadence == 0) {
      const double ms =
          std::chrono::duration<double, std::milli>(Clock::now() - start).count();
      record(t + 1, plans[0].eta_u, plans[0].eta_v, ms,
             last ? &result.client_accuracy : nullptr);
    }
  }

  result.initial_accuracy = result.metrics.front().mean_accuracy;
  result.final_accuracy = result.metrics.back().mean_accuracy;
  for (double target : config.metrics.targets) {
    result.rounds_to_target.push_back({target, rounds_to_target(result.metrics, target)});
  }
  result.final_states = std::move(states);
  return result;
}

}  // namespace dfedpgp
