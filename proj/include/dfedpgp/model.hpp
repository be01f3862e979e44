#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dfedpgp/param_vector.hpp"

namespace dfedpgp {

/// Row-major feature matrix with one class label per row.
struct Batch {
  std::size_t dim = 0;
  std::vector<double> features;  // size() * dim
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  const double* row(std::size_t i) const { return features.data() + i * dim; }
  void push_back(const double* x, int label) {
    features.insert(features.end(), x, x + dim);
    labels.push_back(label);
  }
  friend bool operator==(const Batch&, const Batch&) = default;
};

enum class Activation { kReLU, kTanh };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

/// Multilayer perceptron layout. Layers are numbered 0..L; layer l maps
/// layer_dims[l] -> layer_dims[l + 1]. Layers [0, split_layer) form the
/// shared body u, layers [split_layer, L] the personal head v. A split equal
/// to the layer count shares the whole model (empty head), which is how the
/// full-model baselines are configured.
struct ModelSpec {
  std::vector<std::size_t> layer_dims{32, 64, 10};
  Activation activation = Activation::kReLU;
  std::size_t split_layer = 1;
  double weight_decay = 5e-4;

  std::size_t num_layers() const { return layer_dims.size() - 1; }
  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t num_classes() const { return layer_dims.back(); }
  /// Weights then bias of one layer.
  std::size_t layer_size(std::size_t layer) const {
    return layer_dims[layer] * layer_dims[layer + 1] + layer_dims[layer + 1];
  }
  std::size_t shared_size() const;
  std::size_t personal_size() const;
  /// Throws ConfigError when the layout is unusable.
  void validate() const;
  /// Same architecture with every layer shared.
  ModelSpec fully_shared() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct LossAndGrads {
  double loss = 0.0;
  ParamVector grad_u;
  ParamVector grad_v;
};

struct Evaluation {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

/// Glorot-uniform weights, zero biases; deterministic in seed.
std::pair<ParamVector, ParamVector> init_params(const ModelSpec& spec,
                                                std::uint64_t seed);

/// Logits, row-major n x C.
std::vector<double> forward(const ModelSpec& spec, const ParamVector& u,
                            const ParamVector& v, const Batch& batch);

/// Mean cross-entropy + (weight_decay / 2)(|u|^2 + |v|^2) and its exact
/// gradients.
LossAndGrads loss_and_grads(const ModelSpec& spec, const ParamVector& u,
                            const ParamVector& v, const Batch& batch);

double loss_value(const ModelSpec& spec, const ParamVector& u,
                  const ParamVector& v, const Batch& batch);

Evaluation evaluate(const ModelSpec& spec, const ParamVector& u,
                    const ParamVector& v, const Batch& shard);

using LossFn = std::function<double(const ParamVector&, const ParamVector&)>;

/// Central differences of `loss`, one coordinate at a time.
std::pair<ParamVector, ParamVector> finite_diff_grads(const LossFn& loss,
                                                      const ParamVector& u,
                                                      const ParamVector& v,
                                                      double step);

std::pair<ParamVector, ParamVector> finite_diff_grads(const ModelSpec& spec,
                                                      const ParamVector& u,
                                                      const ParamVector& v,
                                                      const Batch& batch,
                                                      double step);

/// What the client procedures train: a loss over (shared, personal)
/// parameters on a batch.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual std::size_t shared_size() const = 0;
  virtual std::size_t personal_size() const = 0;
  virtual LossAndGrads loss_and_grads(const ParamVector& u, const ParamVector& v,
                                      const Batch& batch) const = 0;
  virtual Evaluation evaluate(const ParamVector& u, const ParamVector& v,
                              const Batch& shard) const = 0;
  virtual std::pair<ParamVector, ParamVector> init(std::uint64_t seed) const = 0;
};

class MlpObjective final : public Objective {
 public:
  explicit MlpObjective(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  std::size_t shared_size() const override { return spec_.shared_size(); }
  std::size_t personal_size() const override { return spec_.personal_size(); }
  LossAndGrads loss_and_grads(const ParamVector& u, const ParamVector& v,
                              const Batch& batch) const override;
  Evaluation evaluate(const ParamVector& u, const ParamVector& v,
                      const Batch& shard) const override;
  std::pair<ParamVector, ParamVector> init(std::uint64_t seed) const override;

 private:
  ModelSpec spec_;
};

/// Separable least squares: each sample x = (a, b) with a of the shared
/// width and b of the personal width contributes
/// |u - a|^2 / 2 + |v - b|^2 / 2. Accuracy is reported as 0.
class QuadraticObjective final : public Objective {
 public:
  QuadraticObjective(std::size_t shared_dim, std::size_t personal_dim,
                     double weight_decay = 0.0);

  std::size_t shared_size() const override { return shared_dim_; }
  std::size_t personal_size() const override { return personal_dim_; }
  LossAndGrads loss_and_grads(const ParamVector& u, const ParamVector& v,
                              const Batch& batch) const override;
  Evaluation evaluate(const ParamVector& u, const ParamVector& v,
                      const Batch& shard) const override;
  /// Coordinates uniform in [-1, 1].
  std::pair<ParamVector, ParamVector> init(std::uint64_t seed) const override;

 private:
  std::size_t shared_dim_;
  std::size_t personal_dim_;
  double weight_decay_;
};

}  // namespace dfedpgp
