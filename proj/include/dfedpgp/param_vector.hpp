#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace dfedpgp {

/// Flat vector of model coordinates (a shared part u, a personal part v, or a
/// gradient of either).
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t n, double fill = 0.0) : values_(n, fill) {}
  explicit ParamVector(std::vector<double> values)
      : values_(std::move(values)) {}

  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  auto begin() { return values_.begin(); }
  auto end() { return values_.end(); }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

  std::span<double> span() { return values_; }
  std::span<const double> span() const { return values_; }
  const std::vector<double>& values() const { return values_; }

  void fill(double value) {
    for (double& x : values_) x = value;
  }

  // this += alpha * x
  void axpy(double alpha, const ParamVector& x) {
    const std::size_t n = values_.size();
    const double* src = x.data();
    double* dst = values_.data();
    for (std::size_t i = 0; i < n; ++i) dst[i] += alpha * src[i];
  }

  void scale(double alpha) {
    for (double& x : values_) x *= alpha;
  }

  double squared_norm() const {
    double s = 0.0;
    for (double x : values_) s += x * x;
    return s;
  }

  double norm() const { return std::sqrt(squared_norm()); }

  bool all_finite() const {
    for (double x : values_) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<double> values_;
};

inline ParamVector concat(const ParamVector& a, const ParamVector& b) {
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return ParamVector(std::move(out));
}

}  // namespace dfedpgp
