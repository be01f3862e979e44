#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>

#include "dfedpgp/error.hpp"
#include "dfedpgp/model.hpp"
#include "support.hpp"

using namespace dfedpgp;

namespace {

// Straightforward forward pass over the concatenated parameters, written
// independently of the library. Returns logits and records every hidden
// pre-activation in `pre`.
std::vector<double> naive_forward(const ModelSpec& spec, const ParamVector& u,
                                  const ParamVector& v, const Batch& batch,
                                  std::vector<double>* pre = nullptr) {
  const ParamVector all = concat(u, v);
  std::vector<double> logits;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    std::vector<double> h(batch.row(s), batch.row(s) + batch.dim);
    std::size_t off = 0;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
      const std::size_t in = spec.layer_dims[l];
      const std::size_t out = spec.layer_dims[l + 1];
      std::vector<double> next(out);
      for (std::size_t o = 0; o < out; ++o) {
        double a = all[off + in * out + o];
        for (std::size_t k = 0; k < in; ++k) a += h[k] * all[off + k * out + o];
        next[o] = a;
      }
      off += in * out + out;
      if (l + 1 < spec.num_layers()) {
        for (double& a : next) {
          if (pre) pre->push_back(a);
          a = spec.activation == Activation::kReLU ? std::max(a, 0.0) : std::tanh(a);
        }
      }
      h = std::move(next);
    }
    logits.insert(logits.end(), h.begin(), h.end());
  }
  return logits;
}

double naive_loss(const ModelSpec& spec, const ParamVector& u, const ParamVector& v,
                  const Batch& batch) {
  const auto z = naive_forward(spec, u, v, batch);
  const std::size_t c = spec.num_classes();
  double total = 0.0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const double* row = z.data() + s * c;
    const double mx = *std::max_element(row, row + c);
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) sum += std::exp(row[k] - mx);
    total += std::log(sum) + mx - row[batch.labels[s]];
  }
  return total / static_cast<double>(batch.size()) +
         0.5 * spec.weight_decay * (u.squared_norm() + v.squared_norm());
}

ModelSpec random_spec(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> width(1, 6);
  std::uniform_int_distribution<std::size_t> depth(1, 3);
  ModelSpec spec;
  spec.layer_dims.clear();
  const std::size_t hidden = depth(rng);
  spec.layer_dims.push_back(width(rng));
  for (std::size_t l = 0; l < hidden; ++l) spec.layer_dims.push_back(width(rng));
  spec.layer_dims.push_back(1 + width(rng));
  std::uniform_int_distribution<std::size_t> split(1, hidden);
  spec.split_layer = split(rng);
  spec.activation = rng() % 2 == 0 ? Activation::kReLU : Activation::kTanh;
  spec.weight_decay = (rng() % 2 == 0) ? 0.0 : 1e-2;
  return spec;
}

double relative_error(const ParamVector& g, const ParamVector& fd) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    num = std::max(num, std::abs(g[i] - fd[i]));
    den = std::max(den, std::abs(g[i]));
  }
  return num / std::max(den, 1e-8);
}

}  // namespace

TEST_CASE("spec sizes and validation") {
  ModelSpec spec;
  CHECK(spec.shared_size() == 32 * 64 + 64);
  CHECK(spec.personal_size() == 64 * 10 + 10);
  spec.split_layer = 0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.split_layer = 3;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.split_layer = 2;
  CHECK_NOTHROW(spec.validate());
  CHECK(spec.personal_size() == 0);
  spec.layer_dims = {4};
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  ModelSpec neg;
  neg.weight_decay = -1.0;
  CHECK_THROWS_AS(neg.validate(), ConfigError);
}

TEST_CASE("initialization") {
  ModelSpec spec;
  spec.layer_dims = {100, 100, 10};
  const auto [u1, v1] = init_params(spec, 42);
  const auto [u2, v2] = init_params(spec, 42);
  CHECK(u1 == u2);
  CHECK(v1 == v2);
  CHECK_FALSE(init_params(spec, 43).first == u1);

  // Biases sit right after each layer's weight block.
  for (std::size_t o = 0; o < 100; ++o) CHECK(u1[100 * 100 + o] == 0.0);
  for (std::size_t o = 0; o < 10; ++o) CHECK(v1[100 * 10 + o] == 0.0);

  const double a = std::sqrt(6.0 / 200.0);
  double sum = 0.0;
  for (std::size_t k = 0; k < 100 * 100; ++k) {
    CHECK(std::abs(u1[k]) <= a);
    sum += u1[k];
  }
  const double n = 1e4;
  const double sigma = a / std::sqrt(3.0);  // sd of uniform(-a, a)
  CHECK(std::abs(sum / n) < 3.0 * sigma / std::sqrt(n));
}

TEST_CASE("forward") {
  std::mt19937_64 rng(7);
  ModelSpec spec;
  spec.layer_dims = {5, 7, 4};
  const Batch batch = testing::random_batch(6, 5, 4, rng);
  SUBCASE("zero parameters give zero logits") {
    const auto z = forward(spec, ParamVector(spec.shared_size()), ParamVector(spec.personal_size()), batch);
    for (double x : z) CHECK(x == 0.0);
  }
  SUBCASE("one-dimensional affine composition") {
    ModelSpec tiny;
    tiny.layer_dims = {1, 1, 1};
    tiny.activation = Activation::kTanh;
    const ParamVector u(std::vector<double>{0.5, 0.25});  // w1, b1
    const ParamVector v(std::vector<double>{-2.0, 1.0});  // w2, b2
    Batch b;
    b.dim = 1;
    const double x = 0.8;
    b.push_back(&x, 0);
    const auto z = forward(tiny, u, v, b);
    CHECK(z[0] == doctest::Approx(-2.0 * std::tanh(0.5 * 0.8 + 0.25) + 1.0).epsilon(1e-15));
  }
  SUBCASE("matches the naive forward pass") {
    for (int trial = 0; trial < 20; ++trial) {
      const ModelSpec s = random_spec(rng);
      const Batch b = testing::random_batch(4, s.input_dim(), static_cast<int>(s.num_classes()), rng);
      const auto u = testing::random_vector(s.shared_size(), rng);
      const auto v = testing::random_vector(s.personal_size(), rng);
      const auto got = forward(s, u, v, b);
      const auto want = naive_forward(s, u, v, b);
      REQUIRE(got.size() == want.size());
      for (std::size_t k = 0; k < got.size(); ++k) CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-12));
    }
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(forward(spec, ParamVector(3), ParamVector(spec.personal_size()), batch), ConfigError);
    const Batch wrong = testing::random_batch(2, 4, 4, rng);
    CHECK_THROWS_AS(forward(spec, ParamVector(spec.shared_size()), ParamVector(spec.personal_size()), wrong),
                    ConfigError);
  }
}

TEST_CASE("loss and gradients") {
  std::mt19937_64 rng(9);
  SUBCASE("zero parameters give ln C") {
    ModelSpec spec;
    spec.weight_decay = 0.0;
    const Batch b = testing::random_batch(8, 32, 10, rng);
    const auto r = loss_and_grads(spec, ParamVector(spec.shared_size()), ParamVector(spec.personal_size()), b);
    CHECK(r.loss == doctest::Approx(std::log(10.0)).epsilon(1e-14));
  }
  SUBCASE("loss matches the naive oracle") {
    for (int trial = 0; trial < 20; ++trial) {
      const ModelSpec s = random_spec(rng);
      const Batch b = testing::random_batch(5, s.input_dim(), static_cast<int>(s.num_classes()), rng);
      const auto u = testing::random_vector(s.shared_size(), rng);
      const auto v = testing::random_vector(s.personal_size(), rng);
      CHECK(loss_value(s, u, v, b) == doctest::Approx(naive_loss(s, u, v, b)).epsilon(1e-12));
    }
  }
  SUBCASE("analytic gradients match central differences") {
    int accepted = 0;
    while (accepted < 50) {
      const ModelSpec s = random_spec(rng);
      const Batch b = testing::random_batch(4, s.input_dim(), static_cast<int>(s.num_classes()), rng);
      const auto u = testing::random_vector(s.shared_size(), rng);
      const auto v = testing::random_vector(s.personal_size(), rng);
      if (s.activation == Activation::kReLU) {
        std::vector<double> pre;
        naive_forward(s, u, v, b, &pre);
        const bool near_kink = std::any_of(pre.begin(), pre.end(),
                                           [](double a) { return std::abs(a) < 1e-3; });
        if (near_kink) continue;
      }
      ++accepted;
      const auto r = loss_and_grads(s, u, v, b);
      const LossFn f = [&](const ParamVector& a, const ParamVector& c) { return naive_loss(s, a, c, b); };
      const auto [fu, fv] = finite_diff_grads(f, u, v, 1e-5);
      CHECK(relative_error(concat(r.grad_u, r.grad_v), concat(fu, fv)) < 1e-6);
    }
  }
  SUBCASE("duplicating every sample changes nothing") {
    ModelSpec spec;
    spec.layer_dims = {5, 6, 3};
    const Batch b = testing::random_batch(7, 5, 3, rng);
    Batch twice = b;
    for (std::size_t s = 0; s < b.size(); ++s) twice.push_back(b.row(s), b.labels[s]);
    const auto u = testing::random_vector(spec.shared_size(), rng);
    const auto v = testing::random_vector(spec.personal_size(), rng);
    const auto r1 = loss_and_grads(spec, u, v, b);
    const auto r2 = loss_and_grads(spec, u, v, twice);
    CHECK(r1.loss == doctest::Approx(r2.loss).epsilon(1e-14));
    CHECK(testing::max_abs_diff(r1.grad_u, r2.grad_u) < 1e-14);
    CHECK(testing::max_abs_diff(r1.grad_v, r2.grad_v) < 1e-14);
  }
  SUBCASE("loss is invariant under row permutation") {
    ModelSpec spec;
    spec.layer_dims = {5, 6, 3};
    const Batch b = testing::random_batch(9, 5, 3, rng);
    std::vector<std::size_t> perm(b.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Batch shuffled;
    shuffled.dim = b.dim;
    for (std::size_t s : perm) shuffled.push_back(b.row(s), b.labels[s]);
    const auto u = testing::random_vector(spec.shared_size(), rng);
    const auto v = testing::random_vector(spec.personal_size(), rng);
    CHECK(loss_value(spec, u, v, b) == doctest::Approx(loss_value(spec, u, v, shuffled)).epsilon(1e-14));
  }
  SUBCASE("split gradients equal the unsplit model's gradient") {
    for (int trial = 0; trial < 20; ++trial) {
      const ModelSpec s = random_spec(rng);
      const Batch b = testing::random_batch(5, s.input_dim(), static_cast<int>(s.num_classes()), rng);
      const auto u = testing::random_vector(s.shared_size(), rng);
      const auto v = testing::random_vector(s.personal_size(), rng);
      const auto split = loss_and_grads(s, u, v, b);
      const ModelSpec whole = s.fully_shared();
      const auto full = loss_and_grads(whole, concat(u, v), ParamVector(), b);
      CHECK(full.grad_v.size() == 0);
      CHECK(testing::max_abs_diff(concat(split.grad_u, split.grad_v), full.grad_u) <= 1e-12);
    }
  }
  SUBCASE("inputs are not mutated") {
    ModelSpec spec;
    spec.layer_dims = {4, 5, 3};
    const Batch b = testing::random_batch(6, 4, 3, rng);
    const auto u = testing::random_vector(spec.shared_size(), rng);
    const auto v = testing::random_vector(spec.personal_size(), rng);
    const auto hu = testing::hash_bytes(u.span());
    const auto hv = testing::hash_bytes(v.span());
    const auto hb = testing::hash_bytes(b.features);
    forward(spec, u, v, b);
    loss_and_grads(spec, u, v, b);
    CHECK(testing::hash_bytes(u.span()) == hu);
    CHECK(testing::hash_bytes(v.span()) == hv);
    CHECK(testing::hash_bytes(b.features) == hb);
  }
  SUBCASE("non-finite inputs raise a numeric error") {
    ModelSpec spec;
    spec.layer_dims = {2, 2, 2};
    auto u = ParamVector(spec.shared_size());
    u[0] = std::numeric_limits<double>::infinity();
    Batch b;
    b.dim = 2;
    const double x[2] = {1.0, 1.0};
    b.push_back(x, 0);
    CHECK_THROWS_AS(loss_and_grads(spec, u, ParamVector(spec.personal_size()), b), NumericError);
  }
}

TEST_CASE("finite differences") {
  std::mt19937_64 rng(13);
  SUBCASE("exact on a quadratic up to rounding") {
    const LossFn f = [](const ParamVector& u, const ParamVector& v) {
      return 0.5 * u.squared_norm() + 3.0 * v.squared_norm();
    };
    const auto u = testing::random_vector(4, rng);
    const auto v = testing::random_vector(3, rng);
    const auto [gu, gv] = finite_diff_grads(f, u, v, 1e-4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(gu[i] == doctest::Approx(u[i]).epsilon(1e-9));
    for (std::size_t i = 0; i < 3; ++i) CHECK(gv[i] == doctest::Approx(6.0 * v[i]).epsilon(1e-9));
  }
  SUBCASE("self-consistent across step sizes on 20 seeds") {
    for (int trial = 0; trial < 20; ++trial) {
      ModelSpec s = random_spec(rng);
      s.activation = Activation::kTanh;
      const Batch b = testing::random_batch(4, s.input_dim(), static_cast<int>(s.num_classes()), rng);
      const auto u = testing::random_vector(s.shared_size(), rng);
      const auto v = testing::random_vector(s.personal_size(), rng);
      const auto [a_u, a_v] = finite_diff_grads(s, u, v, b, 1e-4);
      const auto [b_u, b_v] = finite_diff_grads(s, u, v, b, 1e-5);
      CHECK(relative_error(concat(a_u, a_v), concat(b_u, b_v)) < 1e-6);
    }
  }
}

TEST_CASE("evaluate") {
  std::mt19937_64 rng(17);
  SUBCASE("separable two-point shard") {
    ModelSpec spec;
    spec.layer_dims = {1, 1, 2};
    spec.activation = Activation::kTanh;
    // Hidden h = tanh(x); logits = (h, -h).
    const ParamVector u(std::vector<double>{1.0, 0.0});
    const ParamVector v(std::vector<double>{1.0, -1.0, 0.0, 0.0});
    Batch b;
    b.dim = 1;
    const double a = 1.0;
    const double c = -1.0;
    b.push_back(&a, 0);
    b.push_back(&c, 1);
    CHECK(evaluate(spec, u, v, b).accuracy == 1.0);
    Batch twice = b;
    twice.push_back(&a, 0);
    twice.push_back(&c, 1);
    CHECK(evaluate(spec, u, v, twice).accuracy == 1.0);
  }
  SUBCASE("random labels on an untrained model") {
    ModelSpec spec;
    const std::size_t n = 2000;
    const Batch b = testing::random_batch(n, 32, 10, rng);
    const auto [u, v] = init_params(spec, 3);
    const double acc = evaluate(spec, u, v, b).accuracy;
    CHECK(std::abs(acc - 0.1) < 5.0 / std::sqrt(static_cast<double>(n)));
    Batch twice = b;
    for (std::size_t s = 0; s < b.size(); ++s) twice.push_back(b.row(s), b.labels[s]);
    CHECK(evaluate(spec, u, v, twice).accuracy == acc);
  }
  SUBCASE("empty shard") {
    ModelSpec spec;
    Batch empty;
    empty.dim = 32;
    CHECK_THROWS_AS(evaluate(spec, ParamVector(spec.shared_size()), ParamVector(spec.personal_size()), empty),
                    EvaluationError);
  }
}

TEST_CASE("quadratic objective") {
  QuadraticObjective q(2, 1, 0.0);
  Batch b;
  b.dim = 3;
  const double x1[3] = {1.0, 2.0, 3.0};
  const double x2[3] = {3.0, 4.0, 5.0};
  b.push_back(x1, 0);
  b.push_back(x2, 0);
  const ParamVector u(std::vector<double>{0.0, 0.0});
  const ParamVector v(std::vector<double>{1.0});
  const auto r = q.loss_and_grads(u, v, b);
  CHECK(r.grad_u[0] == -2.0);
  CHECK(r.grad_u[1] == -3.0);
  CHECK(r.grad_v[0] == -3.0);
  // ((1 + 4 + 4) + (9 + 16 + 16)) / 2 / 2
  CHECK(r.loss == doctest::Approx(12.5));
  CHECK(q.evaluate(u, v, b).accuracy == 0.0);
  CHECK_THROWS_AS(QuadraticObjective(0, 1), ConfigError);
}

TEST_CASE("MLP objective delegates to the model functions") {
  std::mt19937_64 rng(19);
  ModelSpec spec;
  spec.layer_dims = {4, 5, 3};
  const MlpObjective obj(spec);
  const Batch b = testing::random_batch(5, 4, 3, rng);
  const auto [u, v] = obj.init(8);
  CHECK(u == init_params(spec, 8).first);
  const auto a = obj.loss_and_grads(u, v, b);
  const auto c = loss_and_grads(spec, u, v, b);
  CHECK(a.loss == c.loss);
  CHECK(a.grad_u == c.grad_u);
  CHECK(obj.shared_size() == spec.shared_size());
}
