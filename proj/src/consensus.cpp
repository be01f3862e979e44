#include "dfedpgp/consensus.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dfedpgp/error.hpp"
#include "dfedpgp/parallel.hpp"

namespace dfedpgp {

PushSumCell::PushSumCell(ParamVector u) : u_(std::move(u)), mu_(1.0) {
  refresh();
}

PushSumCell::PushSumCell(ParamVector u, double mu) : u_(std::move(u)), mu_(mu) {
  refresh();
}

void PushSumCell::set(ParamVector u, double mu) {
  u_ = std::move(u);
  mu_ = mu;
  refresh();
}

void PushSumCell::set_u(ParamVector u) {
  u_ = std::move(u);
  refresh();
}

void PushSumCell::refresh() {
  z_ = u_;
  if (mu_ != 1.0) {
    for (double& x : z_) x /= mu_;
  }
}

namespace {

void mix_row(std::span<const ParamVector> values, const MixingMatrix& matrix,
             std::size_t i, ParamVector& out) {
  const std::size_t m = matrix.size();
  out = ParamVector(values.empty() ? 0 : values[0].size(), 0.0);
  const std::size_t k = matrix.uniform_row_count(i);
  const auto row = matrix.row(i);
  if (k > 0) {
    for (std::size_t j = 0; j < m; ++j) {
      if (row[j] != 0.0) out.axpy(1.0, values[j]);
    }
    const double count = static_cast<double>(k);
    for (double& x : out) x /= count;
    return;
  }
  for (std::size_t j = 0; j < m; ++j) {
    if (row[j] != 0.0) out.axpy(row[j], values[j]);
  }
}

double mix_scalar(std::span<const double> values, const MixingMatrix& matrix,
                  std::size_t i) {
  const std::size_t m = matrix.size();
  const std::size_t k = matrix.uniform_row_count(i);
  const auto row = matrix.row(i);
  double acc = 0.0;
  if (k > 0) {
    for (std::size_t j = 0; j < m; ++j) {
      if (row[j] != 0.0) acc += values[j];
    }
    return acc / static_cast<double>(k);
  }
  for (std::size_t j = 0; j < m; ++j) {
    if (row[j] != 0.0) acc += row[j] * values[j];
  }
  return acc;
}

void check_dims(std::size_t cells, const MixingMatrix& matrix) {
  if (cells != matrix.size()) {
    throw ConfigError("mixing: " + std::to_string(cells) +
                      " clients but matrix of size " +
                      std::to_string(matrix.size()));
  }
}

}  // namespace

std::vector<ParamVector> mix_vectors(std::span<const ParamVector> values,
                                     const MixingMatrix& matrix,
                                     std::size_t threads) {
  check_dims(values.size(), matrix);
  std::vector<ParamVector> out(values.size());
  parallel_for(values.size(), threads,
               [&](std::size_t i) { mix_row(values, matrix, i, out[i]); });
  return out;
}

std::vector<PushSumCell> mix_step(std::span<const PushSumCell> cells,
                                  const MixingMatrix& matrix, double min_weight,
                                  std::size_t threads) {
  check_dims(cells.size(), matrix);
  const std::size_t m = cells.size();
  std::vector<ParamVector> us(m);
  std::vector<double> mus(m);
  for (std::size_t i = 0; i < m; ++i) {
    us[i] = cells[i].u();
    mus[i] = cells[i].mu();
  }
  std::vector<PushSumCell> out(m);
  parallel_for(m, threads, [&](std::size_t i) {
    const double mu = mix_scalar(mus, matrix, i);
    if (!(mu >= min_weight)) {
      throw ProtocolError("push-sum weight of client " + std::to_string(i) +
                          " fell to " + std::to_string(mu) + " (floor " +
                          std::to_string(min_weight) + ")");
    }
    ParamVector u;
    mix_row(us, matrix, i, u);
    out[i].set(std::move(u), mu);
  });
  return out;
}

std::vector<ParamVector> run_consensus(std::span<const ParamVector> initial,
                                       const TopologySchedule& schedule,
                                       MixingScheme scheme, std::size_t rounds,
                                       double min_weight) {
  if (rounds == 0) throw ConfigError("run_consensus: rounds must be >= 1");
  std::vector<PushSumCell> cells;
  cells.reserve(initial.size());
  for (const auto& x : initial) cells.emplace_back(x);
  for (std::size_t t = 0; t < rounds; ++t) {
    const auto matrix = build_mixing_matrix(schedule.graph(t), scheme);
    cells = mix_step(cells, matrix, min_weight);
  }
  std::vector<ParamVector> z;
  z.reserve(cells.size());
  for (const auto& c : cells) z.push_back(c.z());
  return z;
}

// ---------------------------------------------------------------------------
// Oracle

namespace {

using Wide = long double;

// Neumaier compensated accumulator.
struct CompensatedSum {
  Wide sum = 0;
  Wide carry = 0;
  void add(Wide x) {
    const Wide t = sum + x;
    if (std::abs(sum) >= std::abs(x)) {
      carry += (sum - t) + x;
    } else {
      carry += (x - t) + sum;
    }
    sum = t;
  }
  Wide value() const { return sum + carry; }
};

using WideMatrix = std::vector<Wide>;

WideMatrix widen(const MixingMatrix& p) {
  return WideMatrix(p.weights().begin(), p.weights().end());
}

WideMatrix multiply(const WideMatrix& a, const WideMatrix& b, std::size_t m) {
  WideMatrix c(m * m, 0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      CompensatedSum s;
      for (std::size_t k = 0; k < m; ++k) s.add(a[i * m + k] * b[k * m + j]);
      c[i * m + j] = s.value();
    }
  }
  return c;
}

std::vector<ParamVector> apply_product(const WideMatrix& prod, std::size_t m,
                                       std::span<const ParamVector> initial,
                                       std::span<const double> initial_mu) {
  if (initial.size() != m || initial_mu.size() != m) {
    throw ConfigError("consensus_oracle: expected " + std::to_string(m) +
                      " initial vectors and weights");
  }
  const std::size_t d = m == 0 ? 0 : initial[0].size();
  std::vector<ParamVector> out(m, ParamVector(d));
  for (std::size_t i = 0; i < m; ++i) {
    CompensatedSum mu;
    for (std::size_t j = 0; j < m; ++j) mu.add(prod[i * m + j] * initial_mu[j]);
    for (std::size_t c = 0; c < d; ++c) {
      CompensatedSum u;
      for (std::size_t j = 0; j < m; ++j) u.add(prod[i * m + j] * initial[j][c]);
      out[i][c] = static_cast<double>(u.value() / mu.value());
    }
  }
  return out;
}

}  // namespace

std::vector<ParamVector> consensus_oracle(std::span<const MixingMatrix> matrices,
                                          std::span<const ParamVector> initial,
                                          std::span<const double> initial_mu) {
  const std::size_t m = initial.size();
  WideMatrix prod(m * m, 0);
  for (std::size_t i = 0; i < m; ++i) prod[i * m + i] = 1;
  for (const auto& p : matrices) {
    if (p.size() != m) throw ConfigError("consensus_oracle: matrix size mismatch");
    prod = multiply(widen(p), prod, m);
  }
  return apply_product(prod, m, initial, initial_mu);
}

std::vector<ParamVector> consensus_limit(const MixingMatrix& matrix,
                                         std::span<const ParamVector> initial,
                                         std::span<const double> initial_mu) {
  const std::size_t m = matrix.size();
  WideMatrix power = widen(matrix);
  for (int iter = 0; iter < 200; ++iter) {
    WideMatrix next = multiply(power, power, m);
    Wide diff = 0;
    for (std::size_t k = 0; k < m * m; ++k) {
      diff = std::max(diff, std::abs(next[k] - power[k]));
    }
    power = std::move(next);
    if (diff < 1e-13L) break;
  }
  return apply_product(power, m, initial, initial_mu);
}

double spread(std::span<const ParamVector> vectors) {
  if (vectors.empty()) return 0.0;
  const std::size_t d = vectors[0].size();
  double worst = 0.0;
  for (std::size_t c = 0; c < d; ++c) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& v : vectors) {
      lo = std::min(lo, v[c]);
      hi = std::max(hi, v[c]);
    }
    worst = std::max(worst, hi - lo);
  }
  return worst;
}

double spread(std::span<const PushSumCell> cells) {
  std::vector<ParamVector> z;
  z.reserve(cells.size());
  for (const auto& c : cells) z.push_back(c.z());
  return spread(z);
}

}  // namespace dfedpgp
