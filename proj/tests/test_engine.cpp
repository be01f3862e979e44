#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dfedpgp/engine.hpp"
#include "dfedpgp/error.hpp"
#include "support.hpp"

using namespace dfedpgp;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.clients = 6;
  c.rounds = 3;
  c.data.pool.classes = 4;
  c.data.pool.dim = 8;
  c.data.pool.per_class = 40;
  c.model.mlp.layer_dims = {8, 12, 4};
  c.topology.degree = 2;
  c.plan.batch_size = 8;
  c.plan.epochs_u = 1;
  return c;
}

ExperimentConfig quadratic_config() {
  ExperimentConfig c = small_config();
  c.model.kind = ObjectiveKind::kQuadratic;
  c.model.shared_dim = 6;
  c.model.personal_dim = 2;
  c.model.mlp.weight_decay = 0.0;
  return c;
}

bool same_metrics(const std::vector<RoundMetrics>& a, const std::vector<RoundMetrics>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a[i];
    const auto& y = b[i];
    if (x.round != y.round || x.mean_accuracy != y.mean_accuracy ||
        x.std_accuracy != y.std_accuracy || x.mean_loss != y.mean_loss ||
        x.delta_u != y.delta_u || x.delta_v != y.delta_v || x.spread != y.spread ||
        x.lr_u != y.lr_u || x.lr_v != y.lr_v) {
      return false;
    }
  }
  return true;
}

// Column means of a shard's features over [lo, lo + n).
std::vector<double> feature_mean(const Batch& b, std::size_t lo, std::size_t n) {
  std::vector<double> out(n, 0.0);
  for (std::size_t s = 0; s < b.size(); ++s) {
    for (std::size_t k = 0; k < n; ++k) out[k] += b.row(s)[lo + k];
  }
  for (double& x : out) x /= static_cast<double>(b.size());
  return out;
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_NOTHROW(small_config().validate());
  auto c = small_config();
  c.clients = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.model.mlp.layer_dims = {9, 12, 4};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.lr_decay = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.heterogeneity = {{0.5, 1}, {0.4, 2}};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = quadratic_config();
  c.model.shared_dim = 7;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.topology.kind = TopologyKind::kFromFile;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("cadence") {
  auto c = small_config();
  c.rounds = 200;
  CHECK(c.effective_cadence() == 1);
  c.rounds = 201;
  CHECK(c.effective_cadence() == 5);
  c.metrics.cadence = 7;
  CHECK(c.effective_cadence() == 7);

  c = quadratic_config();
  c.rounds = 10;
  c.metrics.cadence = 4;
  const auto r = run_experiment(c);
  std::vector<std::size_t> rounds;
  for (const auto& m : r.metrics) rounds.push_back(m.round);
  CHECK(rounds == std::vector<std::size_t>{0, 4, 8, 10});
}

TEST_CASE("plans") {
  auto c = small_config();
  c.lr_decay = 0.9;
  c.plan.eta_u = 0.2;
  c.plan.epochs_u = 2;
  c.plan.epochs_v = 3;
  c.heterogeneity = {{0.5, 1}, {0.5, 3}};
  const auto setup = make_setup(c);
  const auto plans = make_plans(c, setup, 2);
  std::size_t triple = 0;
  for (std::size_t i = 0; i < c.clients; ++i) {
    const std::size_t n = setup.shards[i].train.size();
    const std::size_t per_epoch = (n + 7) / 8;
    CHECK(plans[i].steps_u == 2 * per_epoch);
    CHECK(plans[i].steps_v == 3 * per_epoch);
    CHECK(plans[i].eta_u == doctest::Approx(0.2 * 0.81));
    CHECK(plans[i].eta_v == plans[i].eta_u);
    CHECK(plans[i].epoch_multiplier == setup.multipliers[i]);
    triple += plans[i].epoch_multiplier == 3;
  }
  CHECK(triple == 3);
  c.plan.eta_v = 0.05;
  c.plan.steps_u = 4;
  const auto p2 = make_plans(c, setup, 0);
  CHECK(p2[0].eta_v == 0.05);
  CHECK(p2[0].steps_u == 4);
}

TEST_CASE("algorithm selection") {
  auto c = small_config();
  const auto d = with_algorithm(c, Algorithm::kDFedAvgM);
  CHECK(d.topology.kind == TopologyKind::kRandomRegularUndirected);
  CHECK(with_algorithm(c, Algorithm::kOSGP).topology.kind == TopologyKind::kRandomRegularDirected);
  c.topology.kind = TopologyKind::kRing;
  CHECK_THROWS_AS(with_algorithm(c, Algorithm::kDFedAvgMP), ConfigError);
  CHECK(make_setup(with_algorithm(small_config(), Algorithm::kDFedAvgM)).scheme ==
        MixingScheme::kDoublyStochastic);
  CHECK(make_setup(with_algorithm(small_config(), Algorithm::kOSGP)).objective->personal_size() == 0);
  CHECK(make_setup(small_config()).objective->personal_size() > 0);
}

TEST_CASE("heterogeneity assignment") {
  const std::vector<HeterogeneityGroup> five{{0.2, 1}, {0.2, 2}, {0.2, 3}, {0.2, 4}, {0.2, 5}};
  const auto a = assign_heterogeneity(100, five, 3);
  for (std::size_t k = 1; k <= 5; ++k) CHECK(std::count(a.begin(), a.end(), k) == 20);
  CHECK(assign_heterogeneity(100, five, 3) == a);
  CHECK_FALSE(assign_heterogeneity(100, five, 4) == a);
  const std::vector<HeterogeneityGroup> one{{1.0, 2}};
  for (auto x : assign_heterogeneity(7, one, 1)) CHECK(x == 2);
  const std::vector<HeterogeneityGroup> bad{{0.3, 1}};
  CHECK_THROWS_AS(assign_heterogeneity(5, bad, 1), ConfigError);
  CHECK_THROWS_AS(assign_heterogeneity(5, {}, 1), ConfigError);
}

TEST_CASE("rounds to target") {
  std::vector<RoundMetrics> ms(4);
  const double acc[] = {0.1, 0.5, 0.7, 0.6};
  for (std::size_t i = 0; i < 4; ++i) {
    ms[i].round = i * 5;
    ms[i].mean_accuracy = acc[i];
  }
  CHECK(rounds_to_target(ms, 0.05) == 0u);
  CHECK(rounds_to_target(ms, 0.5) == 5u);
  CHECK(rounds_to_target(ms, 0.65) == 10u);
  CHECK_FALSE(rounds_to_target(ms, 0.71).has_value());
  CHECK_FALSE(rounds_to_target({}, 0.0).has_value());
}

TEST_CASE("stationarity measures on the quadratic") {
  const auto c = quadratic_config();
  auto setup = make_setup(c);
  const auto& obj = *setup.objective;
  const std::size_t m = c.clients;
  std::mt19937_64 rng(5);
  auto states = setup.initial_states;
  for (auto& s : states) {
    s.cell.set(testing::random_vector(6, rng), 0.5 + std::uniform_real_distribution<>(0, 1)(rng));
    s.v = testing::random_vector(2, rng);
  }
  SUBCASE("closed forms") {
    // grad_u F_i(u) = u - mean(a_i); grad_v F_i = v - mean(b_i).
    std::vector<double> ubar(6, 0.0);
    for (const auto& s : states) {
      for (std::size_t k = 0; k < 6; ++k) ubar[k] += s.cell.u()[k] / m;
    }
    std::vector<double> g(6, 0.0);
    double dv = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const auto a = feature_mean(setup.shards[i].train, 0, 6);
      const auto b = feature_mean(setup.shards[i].train, 6, 2);
      for (std::size_t k = 0; k < 6; ++k) g[k] += (ubar[k] - a[k]) / m;
      for (std::size_t k = 0; k < 2; ++k) {
        const double d = states[i].v[k] - b[k];
        dv += d * d / m;
      }
    }
    double du = 0.0;
    for (double x : g) du += x * x;
    CHECK(compute_delta_u(states, obj, setup.shards) == doctest::Approx(du).epsilon(1e-12));
    CHECK(compute_delta_v(states, obj, setup.shards) == doctest::Approx(dv).epsilon(1e-12));
  }
  SUBCASE("zero at the stationary point") {
    std::vector<double> target(6, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const auto a = feature_mean(setup.shards[i].train, 0, 6);
      for (std::size_t k = 0; k < 6; ++k) target[k] += a[k] / m;
    }
    for (std::size_t i = 0; i < m; ++i) {
      // Biased parts whose mean is the stationary point, with varied mu.
      ParamVector u(target);
      u[0] += (static_cast<double>(i) - 2.5) * 0.1;
      states[i].cell.set(u, 1.0 + static_cast<double>(i));
      ParamVector v(feature_mean(setup.shards[i].train, 6, 2));
      states[i].v = v;
    }
    CHECK(compute_delta_u(states, obj, setup.shards) < 1e-28);
    CHECK(compute_delta_v(states, obj, setup.shards) < 1e-28);
  }
  SUBCASE("single client") {
    const auto one = std::span(states).first(1);
    const auto a = feature_mean(setup.shards[0].train, 0, 6);
    double du = 0.0;
    for (std::size_t k = 0; k < 6; ++k) {
      const double d = states[0].cell.u()[k] - a[k];
      du += d * d;
    }
    CHECK(compute_delta_u(one, obj, std::span(setup.shards).first(1)) ==
          doctest::Approx(du).epsilon(1e-12));
  }
}

TEST_CASE("stationarity measures agree with finite differences") {
  auto c = small_config();
  c.model.mlp.activation = Activation::kTanh;
  c.per_client_init = true;
  const auto setup = make_setup(c);
  const auto& mlp = static_cast<const MlpObjective&>(*setup.objective);
  const auto& states = setup.initial_states;
  const std::size_t m = c.clients;
  ParamVector ubar(mlp.shared_size());
  for (const auto& s : states) ubar.axpy(1.0 / m, s.cell.u());
  ParamVector g(mlp.shared_size());
  double dv = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto fd_u = finite_diff_grads(mlp.spec(), ubar, states[i].v, setup.shards[i].train, 1e-5);
    g.axpy(1.0 / m, fd_u.first);
    const auto fd_v = finite_diff_grads(mlp.spec(), states[i].cell.z(), states[i].v,
                                        setup.shards[i].train, 1e-5);
    dv += fd_v.second.squared_norm() / m;
  }
  const double du = g.squared_norm();
  CHECK(std::abs(compute_delta_u(states, mlp, setup.shards) - du) / du < 1e-6);
  CHECK(std::abs(compute_delta_v(states, mlp, setup.shards) - dv) / dv < 1e-6);
}

TEST_CASE("metrics") {
  const auto c = small_config();
  const auto setup = make_setup(c);
  std::vector<double> acc;
  const auto rm = compute_metrics(setup.initial_states, *setup.objective, setup.shards, 1, &acc);
  REQUIRE(acc.size() == c.clients);
  auto oracle = [&](const std::vector<double>& a) {
    double sum = 0.0;
    std::size_t n = 0;
    for (double x : a) {
      if (std::isnan(x)) continue;
      sum += x;
      ++n;
    }
    const double mean = sum / n;
    double var = 0.0;
    for (double x : a) {
      if (!std::isnan(x)) var += (x - mean) * (x - mean) / n;
    }
    return std::pair{mean, std::sqrt(var)};
  };
  const auto [mean, sd] = oracle(acc);
  CHECK(rm.mean_accuracy == doctest::Approx(mean));
  CHECK(rm.std_accuracy == doctest::Approx(sd));
  CHECK(rm.spread == 0.0);
  for (std::size_t i = 0; i < c.clients; ++i) {
    CHECK(std::isnan(acc[i]) == (setup.shards[i].test.size() == 0));
    if (std::isnan(acc[i])) continue;
    CHECK(acc[i] == setup.objective->evaluate(setup.initial_states[i].cell.z(),
                                              setup.initial_states[i].v, setup.shards[i].test)
                        .accuracy);
  }
  SUBCASE("clients without test data are left out of accuracy") {
    auto shards = setup.shards;
    std::size_t drop = 0;
    while (shards[drop].test.size() == 0) ++drop;
    shards[drop].test = Batch{};
    shards[drop].test.dim = 8;
    std::vector<double> acc2;
    const auto r2 = compute_metrics(setup.initial_states, *setup.objective, shards, 1, &acc2);
    CHECK(std::isnan(acc2[drop]));
    auto expect = acc;
    expect[drop] = std::nan("");
    CHECK(r2.mean_accuracy == doctest::Approx(oracle(expect).first));
    CHECK(r2.mean_loss == rm.mean_loss);
  }
}

TEST_CASE("experiment runs") {
  SUBCASE("zero rates and one round: accuracy unchanged") {
    auto c = small_config();
    c.rounds = 1;
    c.plan.eta_u = 0.0;
    for (Algorithm a : kAblationAlgorithms) {
      const auto r = run_experiment(with_algorithm(c, a));
      CAPTURE(to_string(a));
      CHECK(r.final_accuracy == r.initial_accuracy);
      REQUIRE(r.metrics.size() == 2);
      CHECK(r.metrics[1].mean_loss == r.metrics[0].mean_loss);
    }
  }
  SUBCASE("deterministic") {
    const auto c = small_config();
    const auto a = run_experiment(c);
    const auto b = run_experiment(c);
    CHECK(same_metrics(a.metrics, b.metrics));
    CHECK(a.final_states == b.final_states);
    auto c2 = c;
    c2.seed = 2;
    CHECK_FALSE(same_metrics(a.metrics, run_experiment(c2).metrics));
  }
  SUBCASE("threads do not change results") {
    for (Algorithm algo : kAblationAlgorithms) {
      auto c = with_algorithm(small_config(), algo);
      const auto a = run_experiment(c);
      c.threads = 3;
      const auto b = run_experiment(c);
      CAPTURE(to_string(algo));
      CHECK(same_metrics(a.metrics, b.metrics));
    }
  }
  SUBCASE("learns") {
    auto c = small_config();
    c.clients = 10;
    c.rounds = 30;
    c.data.pool.radius = 3.0;
    c.plan.eta_u = 0.05;
    const auto r = run_experiment(c);
    CHECK(r.final_accuracy - r.initial_accuracy > 0.3);
    CHECK(r.metrics.back().mean_loss < r.metrics.front().mean_loss);
    for (const auto& t : r.rounds_to_target) {
      if (t.round) CHECK(r.metrics[*t.round].mean_accuracy >= t.target);
    }
  }
  SUBCASE("learning rate schedule is recorded") {
    auto c = quadratic_config();
    c.rounds = 4;
    c.lr_decay = 0.5;
    c.plan.eta_u = 0.08;
    const auto r = run_experiment(c);
    CHECK(r.metrics[0].lr_u == 0.08);
    CHECK(r.metrics[1].lr_u == 0.08);
    CHECK(r.metrics[4].lr_u == doctest::Approx(0.01));
  }
  SUBCASE("disconnected topology warns") {
    auto c = quadratic_config();
    c.topology.degree = 0;
    const auto r = run_experiment(c);
    CHECK(r.warnings.size() == 3);
    CHECK(run_experiment(quadratic_config()).warnings.empty() ==
          check_window_connectivity(make_schedule(quadratic_config()), 0, 1));
  }
  SUBCASE("divergence reports the round") {
    auto c = quadratic_config();
    c.plan.eta_u = 1e300;
    c.plan.momentum = 0.0;
    try {
      run_experiment(c);
      FAIL("expected divergence");
    } catch (const DivergenceError& e) {
      CHECK(std::string(e.what()).find("round 0") != std::string::npos);
    }
  }
  SUBCASE("push-sum keeps the shared average on the quadratic at zero rate") {
    auto c = quadratic_config();
    c.per_client_init = true;
    c.plan.eta_u = 0.0;
    c.topology.scheme = MixingScheme::kPushColumnStochastic;
    c.rounds = 200;
    const auto setup = make_setup(c);
    ParamVector mean(6);
    for (const auto& s : setup.initial_states) mean.axpy(1.0 / c.clients, s.cell.u());
    const auto r = run_experiment(c);
    for (const auto& s : r.final_states) CHECK(testing::max_abs_diff(s.cell.z(), mean) < 1e-9);
    CHECK(r.metrics.back().spread < 1e-9);
  }
}
