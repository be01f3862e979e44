#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dfedpgp/consensus.hpp"
#include "dfedpgp/data.hpp"
#include "dfedpgp/model.hpp"
#include "dfedpgp/rng.hpp"
#include "dfedpgp/topology.hpp"

namespace dfedpgp {

/// One client's training state. cell.u() is the biased shared part, cell.z()
/// its de-biased copy used for every gradient and for inference.
struct ClientState {
  PushSumCell cell;
  ParamVector v;
  ParamVector momentum_u;
  ParamVector momentum_v;
  std::uint64_t stream_key = 0;

  friend bool operator==(const ClientState&, const ClientState&) = default;
};

/// Local-phase hyperparameters for one client and one round.
struct LocalPlan {
  std::size_t steps_v = 1;
  std::size_t steps_u = 1;
  double eta_v = 0.1;
  double eta_u = 0.1;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t epoch_multiplier = 1;

  void validate() const;
};

struct RoundContext {
  std::uint64_t seed = 0;
  std::size_t round = 0;
  std::size_t threads = 1;
  double min_weight = kDefaultMinWeight;
};

enum class Algorithm { kDFedPGP, kOSGP, kDFedAvgM, kDFedAvgMP, kLocal };

std::string to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& name);
/// DFedPGP and DFedAvgM-P keep a personal head; the rest share everything.
bool is_partial(Algorithm a);
/// DFedAvgM and DFedAvgM-P gossip over undirected doubly-stochastic graphs.
bool uses_undirected(Algorithm a);

/// Every client starts from the same (u, v); mu = 1; momentum zeroed.
std::vector<ClientState> init_states(const Objective& objective, std::size_t clients,
                                     std::uint64_t init_seed);

/// Uniform-with-replacement minibatch from the client's train shard.
Batch sample_batch(const Batch& shard, std::size_t batch_size, Rng& rng);

/// K_v momentum-SGD steps on v with every gradient taken at the round-start
/// de-biased shared model. The v momentum buffer persists across rounds.
void local_update_v(ClientState& state, const LocalPlan& plan,
                    const Objective& objective, const ClientShard& shard,
                    const RoundContext& ctx);

/// K_u * epoch_multiplier momentum-SGD steps on u. Each gradient is taken at
/// z = u / mu with mu frozen for the phase; z is refreshed after each step.
/// The u momentum buffer is reset at the start of the phase.
void local_update_u(ClientState& state, const LocalPlan& plan,
                    const Objective& objective, const ClientShard& shard,
                    const RoundContext& ctx);

/// v-step, u-step, then one push-sum mix of (u, mu) with the round's matrix.
void dfedpgp_round(std::vector<ClientState>& states, std::span<const LocalPlan> plans,
                   const Objective& objective, std::span<const ClientShard> shards,
                   const TopologySchedule& schedule, MixingScheme scheme,
                   const RoundContext& ctx);

/// Stochastic gradient push on the full model (objective must have an empty
/// personal part).
void osgp_round(std::vector<ClientState>& states, std::span<const LocalPlan> plans,
                const Objective& objective, std::span<const ClientShard> shards,
                const TopologySchedule& schedule, MixingScheme scheme,
                const RoundContext& ctx);

/// Doubly-stochastic gossip of the full model, then local momentum SGD.
void dfedavgm_round(std::vector<ClientState>& states, std::span<const LocalPlan> plans,
                    const Objective& objective, std::span<const ClientShard> shards,
                    const TopologySchedule& schedule, const RoundContext& ctx);

/// v-step, doubly-stochastic gossip of u only, then the u-step.
void dfedavgm_p_round(std::vector<ClientState>& states, std::span<const LocalPlan> plans,
                      const Objective& objective, std::span<const ClientShard> shards,
                      const TopologySchedule& schedule, const RoundContext& ctx);

/// Local momentum SGD on the full model, no communication.
void local_round(std::vector<ClientState>& states, std::span<const LocalPlan> plans,
                 const Objective& objective, std::span<const ClientShard> shards,
                 const RoundContext& ctx);

/// Dispatches to the procedure for `algorithm`. `scheme` is ignored by the
/// undirected and local procedures.
void run_round(Algorithm algorithm, std::vector<ClientState>& states,
               std::span<const LocalPlan> plans, const Objective& objective,
               std::span<const ClientShard> shards, const TopologySchedule& schedule,
               MixingScheme scheme, const RoundContext& ctx);

}  // namespace dfedpgp
