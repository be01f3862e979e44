#include "dfedpgp/algorithms.hpp"

#include <string>

#include "dfedpgp/error.hpp"
#include "dfedpgp/parallel.hpp"
#include "dfedpgp/rng.hpp"

namespace dfedpgp {

void LocalPlan::validate() const {
  if (steps_u < 1 || steps_v < 1) throw ConfigError("plan: local step counts must be >= 1");
  if (!(eta_u >= 0.0) || !(eta_v >= 0.0)) {
    throw ConfigError("plan: learning rates must be nonnegative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("plan: momentum must be in [0, 1)");
  }
  if (batch_size < 1) throw ConfigError("plan: batch_size must be >= 1");
  if (epoch_multiplier < 1) throw ConfigError("plan: epoch multiplier must be >= 1");
}

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kDFedPGP:
      return "dfedpgp";
    case Algorithm::kOSGP:
      return "osgp";
    case Algorithm::kDFedAvgM:
      return "dfedavgm";
    case Algorithm::kDFedAvgMP:
      return "dfedavgm_p";
    case Algorithm::kLocal:
      return "local";
  }
  return "unknown";
}

Algorithm parse_algorithm(const std::string& name) {
  if (name == "dfedpgp") return Algorithm::kDFedPGP;
  if (name == "osgp") return Algorithm::kOSGP;
  if (name == "dfedavgm") return Algorithm::kDFedAvgM;
  if (name == "dfedavgm_p") return Algorithm::kDFedAvgMP;
  if (name == "local") return Algorithm::kLocal;
  throw ConfigError("unknown algorithm '" + name +
                    "' (expected dfedpgp, osgp, dfedavgm, dfedavgm_p or local)");
}

bool is_partial(Algorithm a) {
  return a == Algorithm::kDFedPGP || a == Algorithm::kDFedAvgMP;
}

bool uses_undirected(Algorithm a) {
  return a == Algorithm::kDFedAvgM || a == Algorithm::kDFedAvgMP;
}

std::vector<ClientState> init_states(const Objective& objective, std::size_t clients,
                                     std::uint64_t init_seed) {
  auto [u, v] = objective.init(init_seed);
  std::vector<ClientState> states(clients);
  for (std::size_t i = 0; i < clients; ++i) {
    states[i].cell = PushSumCell(u);
    states[i].v = v;
    states[i].momentum_u = ParamVector(u.size());
    states[i].momentum_v = ParamVector(v.size());
    states[i].stream_key = i;
  }
  return states;
}

Batch sample_batch(const Batch& shard, std::size_t batch_size, Rng& rng) {
  Batch batch;
  batch.dim = shard.dim;
  batch.features.reserve(batch_size * shard.dim);
  batch.labels.reserve(batch_size);
  std::uniform_int_distribution<std::size_t> pick(0, shard.size() - 1);
  for (std::size_t k = 0; k < batch_size; ++k) {
    const std::size_t s = pick(rng);
    batch.push_back(shard.row(s), shard.labels[s]);
  }
  return batch;
}

namespace {

void require_train_data(const ClientShard& shard, std::uint64_t client) {
  if (shard.train.size() == 0) {
    throw ConfigError("client " + std::to_string(client) + " has an empty train shard");
  }
}

void check_finite(const ParamVector& x, const char* what, std::uint64_t client,
                  std::size_t round) {
  if (!x.all_finite()) {
    throw DivergenceError(std::string("non-finite ") + what + " on client " +
                          std::to_string(client) + " in round " +
                          std::to_string(round));
  }
}

// b <- beta * b + g; x <- x - eta * b
void momentum_step(ParamVector& x, ParamVector& buffer, const ParamVector& grad,
                   double eta, double beta) {
  const std::size_t n = x.size();
  for (std::size_t k = 0; k < n; ++k) {
    buffer[k] = beta * buffer[k] + grad[k];
    x[k] -= eta * buffer[k];
  }
}

LossAndGrads guarded_grads(const Objective& objective, const ParamVector& u,
                          const ParamVector& v, const Batch& batch,
                          std::uint64_t client, std::size_t round) {
  try {
    return objective.loss_and_grads(u, v, batch);
  } catch (const NumericError& e) {
    throw DivergenceError(std::string(e.what()) + " on client " + std::to_string(client) +
                          " in round " + std::to_string(round));
  }
}

void check_round_inputs(const std::vector<ClientState>& states,
                        std::span<const LocalPlan> plans,
                        std::span<const ClientShard> shards) {
  if (plans.size() != states.size() || shards.size() != states.size()) {
    throw ConfigError("round: " + std::to_string(states.size()) + " states, " +
                      std::to_string(plans.size()) + " plans, " +
                      std::to_string(shards.size()) + " shards");
  }
}

void mix_push_sum(std::vector<ClientState>& states, const MixingMatrix& matrix,
                  const RoundContext& ctx) {
  std::vector<PushSumCell> cells;
  cells.reserve(states.size());
  for (const auto& s : states) cells.push_back(s.cell);
  auto mixed = mix_step(cells, matrix, ctx.min_weight, ctx.threads);
  for (std::size_t i = 0; i < states.size(); ++i) states[i].cell = std::move(mixed[i]);
}

// Plain gossip of u with mu pinned at 1.
void mix_shared_values(std::vector<ClientState>& states, const MixingMatrix& matrix,
                       const RoundContext& ctx) {
  std::vector<ParamVector> values;
  values.reserve(states.size());
  for (const auto& s : states) values.push_back(s.cell.u());
  auto mixed = mix_vectors(values, matrix, ctx.threads);
  for (std::size_t i = 0; i < states.size(); ++i) {
    states[i].cell.set(std::move(mixed[i]), 1.0);
  }
}

MixingMatrix undirected_matrix(const TopologySchedule& schedule, std::size_t round) {
  return build_mixing_matrix(schedule.graph(round), MixingScheme::kDoublyStochastic);
}

}  // namespace

void local_update_v(ClientState& state, const LocalPlan& plan,
                    const Objective& objective, const ClientShard& shard,
                    const RoundContext& ctx) {
  if (objective.personal_size() == 0) return;
  require_train_data(shard, state.stream_key);
  Rng rng = make_stream(ctx.seed, Purpose::kBatchV, state.stream_key, ctx.round);
  const ParamVector& anchor = state.cell.z();
  for (std::size_t k = 0; k < plan.steps_v; ++k) {
    const Batch batch = sample_batch(shard.train, plan.batch_size, rng);
    const auto lg = guarded_grads(objective, anchor, state.v, batch, state.stream_key, ctx.round);
    momentum_step(state.v, state.momentum_v, lg.grad_v, plan.eta_v, plan.momentum);
    check_finite(state.v, "personal parameters", state.stream_key, ctx.round);
  }
}

void local_update_u(ClientState& state, const LocalPlan& plan,
                    const Objective& objective, const ClientShard& shard,
                    const RoundContext& ctx) {
  require_train_data(shard, state.stream_key);
  const double mu = state.cell.mu();
  if (!(mu >= ctx.min_weight)) {
    throw ProtocolError("push-sum weight of client " + std::to_string(state.stream_key) +
                        " is below the floor in round " + std::to_string(ctx.round));
  }
  Rng rng = make_stream(ctx.seed, Purpose::kBatchU, state.stream_key, ctx.round);
  state.momentum_u.fill(0.0);
  ParamVector u = state.cell.u();
  const std::size_t steps = plan.steps_u * plan.epoch_multiplier;
  for (std::size_t k = 0; k < steps; ++k) {
    const Batch batch = sample_batch(shard.train, plan.batch_size, rng);
    const auto lg =
        guarded_grads(objective, state.cell.z(), state.v, batch, state.stream_key, ctx.round);
    momentum_step(u, state.momentum_u, lg.grad_u, plan.eta_u, plan.momentum);
    check_finite(u, "shared parameters", state.stream_key, ctx.round);
    state.cell.set(u, mu);
  }
}

void dfedpgp_round(std::vector<ClientState>& states, std::span<const LocalPlan> plans,
                   const Objective& objective, std::span<const ClientShard> shards,
                   const TopologySchedule& schedule, MixingScheme scheme,
                   const RoundContext& ctx) {
  check_round_inputs(states, plans, shards);
  parallel_for(states.size(), ctx.threads, [&](std::size_t i) {
    local_update_v(states[i], plans[i], objective, shards[i], ctx);
    local_update_u(states[i], plans[i], objective, shards[i], ctx);
  });
  mix_push_sum(states, build_mixing_matrix(schedule.graph(ctx.round), scheme), ctx);
}

void osgp_round(std::vector<ClientState>& states, std::span<const LocalPlan> plans,
                const Objective& objective, std::span<const ClientShard> shards,
                const TopologySchedule& schedule, MixingScheme scheme,
                const RoundContext& ctx) {
  if (objective.personal_size() != 0) {
    throw ConfigError("osgp: the objective must share every parameter");
  }
  check_round_inputs(states, plans, shards);
  parallel_for(states.size(), ctx.threads, [&](std::size_t i) {
    local_update_u(states[i], plans[i], objective, shards[i], ctx);
  });
  mix_push_sum(states, build_mixing_matrix(schedule.graph(ctx.round), scheme), ctx);
}

void dfedavgm_round(std::vector<ClientState>& states, std::span<const LocalPlan> plans,
                    const Objective& objective, std::span<const ClientShard> shards,
                    const TopologySchedule& schedule, const RoundContext& ctx) {
  if (objective.personal_size() != 0) {
    throw ConfigError("dfedavgm: the objective must share every parameter");
  }
  check_round_inputs(states, plans, shards);
  mix_shared_values(states, undirected_matrix(schedule, ctx.round), ctx);
  parallel_for(states.size(), ctx.threads, [&](std::size_t i) {
    local_update_u(states[i], plans[i], objective, shards[i], ctx);
  });
}

void dfedavgm_p_round(std::vector<ClientState>& states, std::span<const LocalPlan> plans,
                      const Objective& objective, std::span<const ClientShard> shards,
                      const TopologySchedule& schedule, const RoundContext& ctx) {
  check_round_inputs(states, plans, shards);
  parallel_for(states.size(), ctx.threads, [&](std::size_t i) {
    local_update_v(states[i], plans[i], objective, shards[i], ctx);
  });
  mix_shared_values(states, undirected_matrix(schedule, ctx.round), ctx);
  parallel_for(states.size(), ctx.threads, [&](std::size_t i) {
    local_update_u(states[i], plans[i], objective, shards[i], ctx);
  });
}

void local_round(std::vector<ClientState>& states, std::span<const LocalPlan> plans,
                 const Objective& objective, std::span<const ClientShard> shards,
                 const RoundContext& ctx) {
  if (objective.personal_size() != 0) {
    throw ConfigError("local: the objective must share every parameter");
  }
  check_round_inputs(states, plans, shards);
  parallel_for(states.size(), ctx.threads, [&](std::size_t i) {
    local_update_u(states[i], plans[i], objective, shards[i], ctx);
  });
}

void run_round(Algorithm algorithm, std::vector<ClientState>& states,
               std::span<const LocalPlan> plans, const Objective& objective,
               std::span<const ClientShard> shards, const TopologySchedule& schedule,
               MixingScheme scheme, const RoundContext& ctx) {
  switch (algorithm) {
    case Algorithm::kDFedPGP:
      return dfedpgp_round(states, plans, objective, shards, schedule, scheme, ctx);
    case Algorithm::kOSGP:
      return osgp_round(states, plans, objective, shards, schedule, scheme, ctx);
    case Algorithm::kDFedAvgM:
      return dfedavgm_round(states, plans, objective, shards, schedule, ctx);
    case Algorithm::kDFedAvgMP:
      return dfedavgm_p_round(states, plans, objective, shards, schedule, ctx);
    case Algorithm::kLocal:
      return local_round(states, plans, objective, shards, ctx);
  }
}

}  // namespace dfedpgp
