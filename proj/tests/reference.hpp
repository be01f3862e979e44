#pragma once

// Sequential alternating momentum SGD for one client, written out step by
// step. Minibatches are redrawn from the same keyed streams the library uses.

#include <random>

#include "dfedpgp/algorithms.hpp"
#include "dfedpgp/model.hpp"
#include "dfedpgp/rng.hpp"

namespace testing {

using dfedpgp::Batch;
using dfedpgp::Objective;
using dfedpgp::ParamVector;

inline Batch ref_batch(const Batch& shard, std::size_t bs, dfedpgp::Rng& rng) {
  Batch b;
  b.dim = shard.dim;
  std::uniform_int_distribution<std::size_t> pick(0, shard.size() - 1);
  for (std::size_t k = 0; k < bs; ++k) {
    const std::size_t s = pick(rng);
    b.push_back(shard.row(s), shard.labels[s]);
  }
  return b;
}

struct RefClient {
  ParamVector u, v, bv;
};

inline void ref_round(RefClient& c, const dfedpgp::LocalPlan& p, const Objective& obj, const Batch& train,
               std::uint64_t seed, std::uint64_t key, std::size_t round) {
  if (!c.v.empty()) {
    dfedpgp::Rng rv = dfedpgp::make_stream(seed, dfedpgp::Purpose::kBatchV, key, round);
    const ParamVector anchor = c.u;  // mu == 1
    for (std::size_t k = 0; k < p.steps_v; ++k) {
      const auto g = obj.loss_and_grads(anchor, c.v, ref_batch(train, p.batch_size, rv)).grad_v;
      for (std::size_t i = 0; i < c.v.size(); ++i) {
        c.bv[i] = p.momentum * c.bv[i] + g[i];
        c.v[i] -= p.eta_v * c.bv[i];
      }
    }
  }
  dfedpgp::Rng ru = dfedpgp::make_stream(seed, dfedpgp::Purpose::kBatchU, key, round);
  ParamVector bu(c.u.size());
  for (std::size_t k = 0; k < p.steps_u * p.epoch_multiplier; ++k) {
    const auto g = obj.loss_and_grads(c.u, c.v, ref_batch(train, p.batch_size, ru)).grad_u;
    for (std::size_t i = 0; i < c.u.size(); ++i) {
      bu[i] = p.momentum * bu[i] + g[i];
      c.u[i] -= p.eta_u * bu[i];
    }
  }
}

}  // namespace testing
