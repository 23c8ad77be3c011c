#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "dnas/nn/tensor.hpp"

namespace dnas::nn {

template <typename Scalar>
struct Parameter {
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  Matrix<Scalar> m;  // Adam first moment
  Matrix<Scalar> v;  // Adam second moment
};

// Named parameters with paired gradient and Adam buffers. Ordered by name,
// so iteration (and thus every reduction over parameters) is deterministic.
template <typename Scalar>
class ParamStore {
 public:
  Parameter<Scalar>& add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    auto [it, inserted] = params_.try_emplace(name);
    if (!inserted) throw Error(ErrorCode::kShapeMismatch, "duplicate parameter " + name);
    it->second.value = Matrix<Scalar>::Zero(rows, cols);
    it->second.grad = Matrix<Scalar>::Zero(rows, cols);
    it->second.m = Matrix<Scalar>::Zero(rows, cols);
    it->second.v = Matrix<Scalar>::Zero(rows, cols);
    return it->second;
  }

  Parameter<Scalar>& at(const std::string& name) { return lookup(name); }
  const Parameter<Scalar>& at(const std::string& name) const {
    return const_cast<ParamStore*>(this)->lookup(name);
  }
  Matrix<Scalar>& value(const std::string& name) { return lookup(name).value; }
  const Matrix<Scalar>& value(const std::string& name) const { return at(name).value; }
  Matrix<Scalar>& grad(const std::string& name) { return lookup(name).grad; }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  void zero_grad() {
    for (auto& [name, p] : params_) p.grad.setZero();
  }

  Eigen::Index num_scalars() const {
    Eigen::Index n = 0;
    for (const auto& [name, p] : params_) n += p.value.size();
    return n;
  }

  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

 private:
  Parameter<Scalar>& lookup(const std::string& name) {
    const auto it = params_.find(name);
    if (it == params_.end()) throw Error(ErrorCode::kShapeMismatch, "unknown parameter " + name);
    return it->second;
  }

  std::map<std::string, Parameter<Scalar>> params_;
  std::uint64_t step_ = 0;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam; increments the step counter and zeroes gradients.
template <typename Scalar>
void adam_step(ParamStore<Scalar>& store, const AdamOptions& opt) {
  store.set_step(store.step() + 1);
  const double t = static_cast<double>(store.step());
  const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(opt.beta1, t));
  const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(opt.beta2, t));
  const Scalar b1 = static_cast<Scalar>(opt.beta1), b2 = static_cast<Scalar>(opt.beta2);
  const Scalar lr = static_cast<Scalar>(opt.lr), eps = static_cast<Scalar>(opt.eps);
  for (auto& [name, p] : store) {
    p.m = b1 * p.m + (Scalar(1) - b1) * p.grad;
    p.v = b2 * p.v + (Scalar(1) - b2) * p.grad.cwiseAbs2();
    p.value.array() -= lr * (p.m.array() / c1) / ((p.v.array() / c2).sqrt() + eps);
    p.grad.setZero();
  }
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  Eigen::Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  Eigen::Index checked = 0;
};

// Central differences for every coordinate of every parameter. loss_fn must
// be deterministic and populate the store's gradients (they are zeroed before
// each call). Relative error is |a - n| / max(|a|, |n|, 1e-6).
template <typename Scalar>
GradCheckReport grad_check(const std::function<Scalar(ParamStore<Scalar>&)>& loss_fn,
                           ParamStore<Scalar>& store, double eps = 1e-4) {
  store.zero_grad();
  loss_fn(store);
  std::map<std::string, Matrix<Scalar>> analytic;
  for (auto& [name, p] : store) analytic.emplace(name, p.grad);

  GradCheckReport report;
  for (auto& [name, p] : store) {
    const Matrix<Scalar>& a = analytic.at(name);
    for (Eigen::Index k = 0; k < p.value.size(); ++k) {
      Scalar& x = p.value.data()[k];
      const Scalar saved = x;
      x = saved + static_cast<Scalar>(eps);
      store.zero_grad();
      const double up = static_cast<double>(loss_fn(store));
      x = saved - static_cast<Scalar>(eps);
      store.zero_grad();
      const double down = static_cast<double>(loss_fn(store));
      x = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double an = static_cast<double>(a.data()[k]);
      const double denom = std::max({std::abs(an), std::abs(numeric), 1e-6});
      const double rel = std::abs(an - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error || report.worst_index < 0) {
        report.max_rel_error = rel;
        report.worst_param = name;
        report.worst_index = k;
        report.analytic = an;
        report.numeric = numeric;
      }
    }
  }
  store.zero_grad();
  return report;
}

}  // namespace dnas::nn
