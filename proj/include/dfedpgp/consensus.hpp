#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dfedpgp/param_vector.hpp"
#include "dfedpgp/topology.hpp"

namespace dfedpgp {

inline constexpr double kDefaultMinWeight = 1e-12;

/// One client's push-sum state: biased values u, weight mu and the cached
/// de-biased values z = u / mu. The setters keep z in sync.
class PushSumCell {
 public:
  PushSumCell() = default;
  explicit PushSumCell(ParamVector u);
  PushSumCell(ParamVector u, double mu);

  const ParamVector& u() const { return u_; }
  double mu() const { return mu_; }
  const ParamVector& z() const { return z_; }

  void set(ParamVector u, double mu);
  void set_u(ParamVector u);

  friend bool operator==(const PushSumCell&, const PushSumCell&) = default;

 private:
  void refresh();

  ParamVector u_;
  double mu_ = 1.0;
  ParamVector z_;
};

/// out_i = sum_j p(i, j) values_j, summed over j ascending. Rows made of k
/// equal weights 1/k are evaluated as (sum_j values_j) / k.
std::vector<ParamVector> mix_vectors(std::span<const ParamVector> values,
                                     const MixingMatrix& matrix,
                                     std::size_t threads = 1);

/// Synchronous push-sum step over (u, mu) pairs followed by de-biasing.
/// Throws ProtocolError if a mixed weight drops below min_weight.
std::vector<PushSumCell> mix_step(std::span<const PushSumCell> cells,
                                  const MixingMatrix& matrix,
                                  double min_weight = kDefaultMinWeight,
                                  std::size_t threads = 1);

/// Applies mix_step for rounds [0, rounds) with the schedule's per-round
/// matrices, starting from mu = 1, and returns the de-biased vectors.
std::vector<ParamVector> run_consensus(std::span<const ParamVector> initial,
                                       const TopologySchedule& schedule,
                                       MixingScheme scheme, std::size_t rounds,
                                       double min_weight = kDefaultMinWeight);

/// Independent reference for mixing: forms the product of all matrices in
/// extended precision with compensated summation, applies it to (u, mu) and
/// de-biases.
std::vector<ParamVector> consensus_oracle(std::span<const MixingMatrix> matrices,
                                          std::span<const ParamVector> initial,
                                          std::span<const double> initial_mu);

/// Limit of repeated application of one matrix, computed by repeated squaring
/// until successive powers agree to 1e-13.
std::vector<ParamVector> consensus_limit(const MixingMatrix& matrix,
                                         std::span<const ParamVector> initial,
                                         std::span<const double> initial_mu);

/// max over coordinates of (max_i z_i - min_i z_i).
double spread(std::span<const PushSumCell> cells);
double spread(std::span<const ParamVector> vectors);

}  // namespace dfedpgp
