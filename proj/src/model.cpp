#include "dfedpgp/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "dfedpgp/error.hpp"
#include "dfedpgp/rng.hpp"

namespace dfedpgp {

std::string to_string(Activation a) {
  return a == Activation::kReLU ? "relu" : "tanh";
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::kReLU;
  if (name == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation '" + name + "' (expected relu or tanh)");
}

std::size_t ModelSpec::shared_size() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < std::min(split_layer, num_layers()); ++l) {
    n += layer_size(l);
  }
  return n;
}

std::size_t ModelSpec::personal_size() const {
  std::size_t n = 0;
  for (std::size_t l = split_layer; l < num_layers(); ++l) n += layer_size(l);
  return n;
}

void ModelSpec::validate() const {
  if (layer_dims.size() < 2) {
    throw ConfigError("model: layer_dims needs at least input and output sizes");
  }
  for (std::size_t d : layer_dims) {
    if (d == 0) throw ConfigError("model: layer sizes must be positive");
  }
  if (split_layer < 1 || split_layer > num_layers()) {
    throw ConfigError("model: split_layer must be in [1, " +
                      std::to_string(num_layers()) + "], got " +
                      std::to_string(split_layer));
  }
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw ConfigError("model: weight_decay must be a finite nonnegative number");
  }
}

ModelSpec ModelSpec::fully_shared() const {
  ModelSpec s = *this;
  s.split_layer = num_layers();
  return s;
}

namespace {

struct LayerView {
  const double* w;  // in x out, row-major by input unit
  const double* b;
  std::size_t in;
  std::size_t out;
};

struct LayerGrad {
  double* w;
  double* b;
};

class Layout {
 public:
  explicit Layout(const ModelSpec& spec) : spec_(spec) {
    std::size_t off_u = 0;
    std::size_t off_v = 0;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
      if (l < spec.split_layer) {
        offsets_.push_back(off_u);
        off_u += spec.layer_size(l);
      } else {
        offsets_.push_back(off_v);
        off_v += spec.layer_size(l);
      }
    }
  }

  bool shared(std::size_t l) const { return l < spec_.split_layer; }

  LayerView view(const ParamVector& u, const ParamVector& v, std::size_t l) const {
    const double* base = (shared(l) ? u.data() : v.data()) + offsets_[l];
    const std::size_t in = spec_.layer_dims[l];
    const std::size_t out = spec_.layer_dims[l + 1];
    return {base, base + in * out, in, out};
  }

  LayerGrad grad(ParamVector& gu, ParamVector& gv, std::size_t l) const {
    double* base = (shared(l) ? gu.data() : gv.data()) + offsets_[l];
    return {base, base + spec_.layer_dims[l] * spec_.layer_dims[l + 1]};
  }

 private:
  const ModelSpec& spec_;
  std::vector<std::size_t> offsets_;
};

void check_inputs(const ModelSpec& spec, const ParamVector& u,
                  const ParamVector& v, const Batch& batch) {
  if (u.size() != spec.shared_size() || v.size() != spec.personal_size()) {
    throw ConfigError("model: parameter sizes (" + std::to_string(u.size()) +
                      ", " + std::to_string(v.size()) + ") do not match spec (" +
                      std::to_string(spec.shared_size()) + ", " +
                      std::to_string(spec.personal_size()) + ")");
  }
  if (batch.dim != spec.input_dim()) {
    throw ConfigError("model: batch dimension " + std::to_string(batch.dim) +
                      " != input dimension " + std::to_string(spec.input_dim()));
  }
  if (batch.features.size() != batch.size() * batch.dim) {
    throw ConfigError("model: batch feature buffer has wrong size");
  }
  const int classes = static_cast<int>(spec.num_classes());
  for (int y : batch.labels) {
    if (y < 0 || y >= classes) {
      throw ConfigError("model: label " + std::to_string(y) + " outside [0, " +
                        std::to_string(classes) + ")");
    }
  }
}

// Post-activation outputs of every layer; acts[l] is the output of layer l-1
// (acts[0] is unused, the batch itself is the input). The last entry holds
// the logits.
std::vector<std::vector<double>> forward_all(const ModelSpec& spec,
                                             const Layout& layout,
                                             const ParamVector& u,
                                             const ParamVector& v,
                                             const Batch& batch) {
  const std::size_t n = batch.size();
  const std::size_t layers = spec.num_layers();
  std::vector<std::vector<double>> acts(layers + 1);
  for (std::size_t l = 0; l < layers; ++l) {
    const LayerView lv = layout.view(u, v, l);
    const double* input = l == 0 ? batch.features.data() : acts[l].data();
    auto& output = acts[l + 1];
    output.assign(n * lv.out, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      const double* x = input + s * lv.in;
      double* y = output.data() + s * lv.out;
      std::copy(lv.b, lv.b + lv.out, y);
      for (std::size_t i = 0; i < lv.in; ++i) {
        const double a = x[i];
        if (a == 0.0) continue;
        const double* w = lv.w + i * lv.out;
        for (std::size_t o = 0; o < lv.out; ++o) y[o] += a * w[o];
      }
    }
    if (l + 1 < layers) {
      if (spec.activation == Activation::kReLU) {
        for (double& y : output) y = y > 0.0 ? y : 0.0;
      } else {
        for (double& y : output) y = std::tanh(y);
      }
    }
  }
  return acts;
}

double cross_entropy_row(const double* logits, std::size_t classes, int label) {
  double mx = logits[0];
  for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, logits[c]);
  double sum = 0.0;
  for (std::size_t c = 0; c < classes; ++c) sum += std::exp(logits[c] - mx);
  return mx + std::log(sum) - logits[label];
}

}  // namespace

std::pair<ParamVector, ParamVector> init_params(const ModelSpec& spec,
                                                std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ParamVector u(spec.shared_size());
  ParamVector v(spec.personal_size());
  std::size_t off_u = 0;
  std::size_t off_v = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t in = spec.layer_dims[l];
    const std::size_t out = spec.layer_dims[l + 1];
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-a, a);
    const bool shared = l < spec.split_layer;
    ParamVector& target = shared ? u : v;
    std::size_t& off = shared ? off_u : off_v;
    for (std::size_t k = 0; k < in * out; ++k) target[off + k] = dist(rng);
    off += spec.layer_size(l);  // biases stay zero
  }
  return {std::move(u), std::move(v)};
}

std::vector<double> forward(const ModelSpec& spec, const ParamVector& u,
                            const ParamVector& v, const Batch& batch) {
  spec.validate();
  check_inputs(spec, u, v, batch);
  const Layout layout(spec);
  auto acts = forward_all(spec, layout, u, v, batch);
  return std::move(acts.back());
}

LossAndGrads loss_and_grads(const ModelSpec& spec, const ParamVector& u,
                            const ParamVector& v, const Batch& batch) {
  spec.validate();
  check_inputs(spec, u, v, batch);
  if (batch.size() == 0) throw ConfigError("model: empty batch");
  const Layout layout(spec);
  const auto acts = forward_all(spec, layout, u, v, batch);
  const std::size_t n = batch.size();
  const std::size_t classes = spec.num_classes();
  const std::size_t layers = spec.num_layers();
  const double inv_n = 1.0 / static_cast<double>(n);

  LossAndGrads result;
  result.grad_u = ParamVector(u.size());
  result.grad_v = ParamVector(v.size());

  // delta = d(mean CE) / d(logits)
  std::vector<double> delta(n * classes);
  double ce = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const double* z = acts[layers].data() + s * classes;
    double* d = delta.data() + s * classes;
    double mx = z[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, z[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      d[c] = std::exp(z[c] - mx);
      sum += d[c];
    }
    const int y = batch.labels[s];
    ce += mx + std::log(sum) - z[y];
    for (std::size_t c = 0; c < classes; ++c) d[c] = d[c] / sum * inv_n;
    d[y] -= inv_n;
  }

  std::vector<double> prev_delta;
  for (std::size_t l = layers; l-- > 0;) {
    const LayerView lv = layout.view(u, v, l);
    const LayerGrad lg = layout.grad(result.grad_u, result.grad_v, l);
    const double* input = l == 0 ? batch.features.data() : acts[l].data();
    for (std::size_t s = 0; s < n; ++s) {
      const double* x = input + s * lv.in;
      const double* d = delta.data() + s * lv.out;
      for (std::size_t o = 0; o < lv.out; ++o) lg.b[o] += d[o];
      for (std::size_t i = 0; i < lv.in; ++i) {
        const double a = x[i];
        if (a == 0.0) continue;
        double* gw = lg.w + i * lv.out;
        for (std::size_t o = 0; o < lv.out; ++o) gw[o] += a * d[o];
      }
    }
    if (l == 0) break;
    prev_delta.assign(n * lv.in, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      const double* d = delta.data() + s * lv.out;
      const double* a = acts[l].data() + s * lv.in;
      double* pd = prev_delta.data() + s * lv.in;
      for (std::size_t i = 0; i < lv.in; ++i) {
        double deriv;
        if (spec.activation == Activation::kReLU) {
          if (!(a[i] > 0.0)) continue;
          deriv = 1.0;
        } else {
          deriv = 1.0 - a[i] * a[i];
        }
        const double* w = lv.w + i * lv.out;
        double acc = 0.0;
        for (std::size_t o = 0; o < lv.out; ++o) acc += w[o] * d[o];
        pd[i] = acc * deriv;
      }
    }
    delta.swap(prev_delta);
  }

  const double wd = spec.weight_decay;
  result.loss = ce * inv_n + 0.5 * wd * (u.squared_norm() + v.squared_norm());
  if (wd != 0.0) {
    result.grad_u.axpy(wd, u);
    result.grad_v.axpy(wd, v);
  }
  if (!std::isfinite(result.loss)) {
    throw NumericError("model: non-finite loss");
  }
  return result;
}

double loss_value(const ModelSpec& spec, const ParamVector& u,
                  const ParamVector& v, const Batch& batch) {
  spec.validate();
  check_inputs(spec, u, v, batch);
  if (batch.size() == 0) throw ConfigError("model: empty batch");
  const Layout layout(spec);
  const auto acts = forward_all(spec, layout, u, v, batch);
  const std::size_t classes = spec.num_classes();
  double ce = 0.0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    ce += cross_entropy_row(acts.back().data() + s * classes, classes,
                            batch.labels[s]);
  }
  const double loss = ce / static_cast<double>(batch.size()) +
                      0.5 * spec.weight_decay * (u.squared_norm() + v.squared_norm());
  if (!std::isfinite(loss)) throw NumericError("model: non-finite loss");
  return loss;
}

Evaluation evaluate(const ModelSpec& spec, const ParamVector& u,
                    const ParamVector& v, const Batch& shard) {
  if (shard.size() == 0) throw EvaluationError("evaluate: empty shard");
  const auto logits = forward(spec, u, v, shard);
  const std::size_t classes = spec.num_classes();
  std::size_t correct = 0;
  double ce = 0.0;
  for (std::size_t s = 0; s < shard.size(); ++s) {
    const double* z = logits.data() + s * classes;
    const auto best = static_cast<int>(std::max_element(z, z + classes) - z);
    if (best == shard.labels[s]) ++correct;
    ce += cross_entropy_row(z, classes, shard.labels[s]);
  }
  const double n = static_cast<double>(shard.size());
  return {static_cast<double>(correct) / n, ce / n};
}

std::pair<ParamVector, ParamVector> finite_diff_grads(const LossFn& loss,
                                                      const ParamVector& u,
                                                      const ParamVector& v,
                                                      double step) {
  if (!(step > 0.0)) throw ConfigError("finite_diff_grads: step must be positive");
  ParamVector gu(u.size());
  ParamVector gv(v.size());
  ParamVector uu = u;
  ParamVector vv = v;
  for (std::size_t k = 0; k < u.size(); ++k) {
    const double orig = uu[k];
    uu[k] = orig + step;
    const double up = loss(uu, vv);
    uu[k] = orig - step;
    const double down = loss(uu, vv);
    uu[k] = orig;
    gu[k] = (up - down) / (2.0 * step);
  }
  for (std::size_t k = 0; k < v.size(); ++k) {
    const double orig = vv[k];
    vv[k] = orig + step;
    const double up = loss(uu, vv);
    vv[k] = orig - step;
    const double down = loss(uu, vv);
    vv[k] = orig;
    gv[k] = (up - down) / (2.0 * step);
  }
  return {std::move(gu), std::move(gv)};
}

std::pair<ParamVector, ParamVector> finite_diff_grads(const ModelSpec& spec,
                                                      const ParamVector& u,
                                                      const ParamVector& v,
                                                      const Batch& batch,
                                                      double step) {
  return finite_diff_grads(
      [&](const ParamVector& a, const ParamVector& b) {
        return loss_value(spec, a, b, batch);
      },
      u, v, step);
}

// ---------------------------------------------------------------------------

MlpObjective::MlpObjective(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
}

LossAndGrads MlpObjective::loss_and_grads(const ParamVector& u,
                                          const ParamVector& v,
                                          const Batch& batch) const {
  return dfedpgp::loss_and_grads(spec_, u, v, batch);
}

Evaluation MlpObjective::evaluate(const ParamVector& u, const ParamVector& v,
                                  const Batch& shard) const {
  return dfedpgp::evaluate(spec_, u, v, shard);
}

std::pair<ParamVector, ParamVector> MlpObjective::init(std::uint64_t seed) const {
  return init_params(spec_, seed);
}

QuadraticObjective::QuadraticObjective(std::size_t shared_dim,
                                       std::size_t personal_dim,
                                       double weight_decay)
    : shared_dim_(shared_dim), personal_dim_(personal_dim),
      weight_decay_(weight_decay) {
  if (shared_dim_ == 0) throw ConfigError("quadratic: shared_dim must be positive");
  if (!(weight_decay_ >= 0.0)) {
    throw ConfigError("quadratic: weight_decay must be nonnegative");
  }
}

LossAndGrads QuadraticObjective::loss_and_grads(const ParamVector& u,
                                                const ParamVector& v,
                                                const Batch& batch) const {
  if (u.size() != shared_dim_ || v.size() != personal_dim_ ||
      batch.dim != shared_dim_ + personal_dim_) {
    throw ConfigError("quadratic: dimension mismatch");
  }
  if (batch.size() == 0) throw ConfigError("quadratic: empty batch");
  LossAndGrads r;
  r.grad_u = ParamVector(shared_dim_);
  r.grad_v = ParamVector(personal_dim_);
  double loss = 0.0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const double* x = batch.row(s);
    for (std::size_t k = 0; k < shared_dim_; ++k) {
      const double diff = u[k] - x[k];
      loss += 0.5 * diff * diff;
      r.grad_u[k] += diff;
    }
    for (std::size_t k = 0; k < personal_dim_; ++k) {
      const double diff = v[k] - x[shared_dim_ + k];
      loss += 0.5 * diff * diff;
      r.grad_v[k] += diff;
    }
  }
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  r.grad_u.scale(inv_n);
  r.grad_v.scale(inv_n);
  r.loss = loss * inv_n + 0.5 * weight_decay_ * (u.squared_norm() + v.squared_norm());
  if (weight_decay_ != 0.0) {
    r.grad_u.axpy(weight_decay_, u);
    r.grad_v.axpy(weight_decay_, v);
  }
  if (!std::isfinite(r.loss)) throw NumericError("quadratic: non-finite loss");
  return r;
}

Evaluation QuadraticObjective::evaluate(const ParamVector& u, const ParamVector& v,
                                        const Batch& shard) const {
  if (shard.size() == 0) throw EvaluationError("evaluate: empty shard");
  return {0.0, loss_and_grads(u, v, shard).loss};
}

std::pair<ParamVector, ParamVector> QuadraticObjective::init(
    std::uint64_t seed) const {
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  ParamVector u(shared_dim_);
  ParamVector v(personal_dim_);
  for (double& x : u) x = dist(rng);
  for (double& x : v) x = dist(rng);
  return {std::move(u), std::move(v)};
}

}  // namespace dfedpgp
