#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

#include "dnas/nn/tensor.hpp"
#include "dnas/rng.hpp"

namespace dnas::nn {

// KL(N(mu, exp(logvar)) || N(0, I)) summed over every entry:
//   sum 0.5 * (mu^2 + exp(logvar) - 1 - logvar)
template <typename A, typename B>
typename A::Scalar gaussian_kl(const Eigen::MatrixBase<A>& mu, const Eigen::MatrixBase<B>& logvar) {
  require_same_shape(mu, logvar, "gaussian_kl: mu/logvar shape");
  using Scalar = typename A::Scalar;
  return Scalar(0.5) *
         (mu.array().square() + logvar.array().exp() - Scalar(1) - logvar.array()).sum();
}

// Accumulates scale * dKL into grad_mu / grad_logvar.
template <typename Scalar>
void gaussian_kl_backward(const Matrix<Scalar>& mu, const Matrix<Scalar>& logvar, Scalar scale,
                          Matrix<Scalar>& grad_mu, Matrix<Scalar>& grad_logvar) {
  require_same_shape(mu, logvar, "gaussian_kl: mu/logvar shape");
  grad_mu += scale * mu;
  grad_logvar.array() += scale * Scalar(0.5) * (logvar.array().exp() - Scalar(1));
}

template <typename Scalar>
struct Reparameterized {
  Matrix<Scalar> z;
  Matrix<Scalar> noise;  // the standard-normal draw, held fixed for backward
};

// z = mu + exp(0.5 logvar) * eps with eps drawn from a generator seeded by seed.
template <typename Scalar>
Reparameterized<Scalar> reparameterize(const Matrix<Scalar>& mu, const Matrix<Scalar>& logvar,
                                       std::uint64_t seed) {
  require_same_shape(mu, logvar, "reparameterize: mu/logvar shape");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Reparameterized<Scalar> out;
  out.noise.resize(mu.rows(), mu.cols());
  for (Eigen::Index j = 0; j < mu.cols(); ++j)
    for (Eigen::Index i = 0; i < mu.rows(); ++i) out.noise(i, j) = static_cast<Scalar>(normal(rng));
  out.z = mu + ((Scalar(0.5) * logvar.array()).exp() * out.noise.array()).matrix();
  return out;
}

// Accumulates dL/dmu and dL/dlogvar given dL/dz.
template <typename Scalar>
void reparameterize_backward(const Matrix<Scalar>& grad_z, const Matrix<Scalar>& logvar,
                             const Reparameterized<Scalar>& sample, Matrix<Scalar>& grad_mu,
                             Matrix<Scalar>& grad_logvar) {
  grad_mu += grad_z;
  grad_logvar.array() +=
      grad_z.array() * Scalar(0.5) * (Scalar(0.5) * logvar.array()).exp() * sample.noise.array();
}

// Sum of squared differences.
template <typename A, typename B>
typename A::Scalar mse(const Eigen::MatrixBase<A>& pred, const Eigen::MatrixBase<B>& target) {
  require_same_shape(pred, target, "mse: pred/target shape");
  return (pred - target).squaredNorm();
}

template <typename A, typename B>
Matrix<typename A::Scalar> mse_grad(const Eigen::MatrixBase<A>& pred,
                                    const Eigen::MatrixBase<B>& target) {
  require_same_shape(pred, target, "mse: pred/target shape");
  using Scalar = typename A::Scalar;
  return Scalar(2) * (pred - target);
}

enum class Reduction { kMean, kSum };

template <typename Scalar>
struct XentResult {
  Scalar loss = 0;
  Matrix<Scalar> grad;  // dL/dlogits, same shape as logits
};

// Cross-entropy of one target id per column of logits (vocab x positions),
// max-subtracted for stability. kMean averages over positions.
template <typename Scalar>
XentResult<Scalar> softmax_xent(const Matrix<Scalar>& logits, std::span<const int> targets,
                                Reduction reduction = Reduction::kMean) {
  require_shape(static_cast<Eigen::Index>(targets.size()) == logits.cols(),
                "softmax_xent: one target per column required");
  XentResult<Scalar> out;
  out.grad.resize(logits.rows(), logits.cols());
  const Scalar scale = reduction == Reduction::kMean && logits.cols() > 0
                           ? Scalar(1) / static_cast<Scalar>(logits.cols())
                           : Scalar(1);
  for (Eigen::Index p = 0; p < logits.cols(); ++p) {
    const int target = targets[static_cast<std::size_t>(p)];
    if (target < 0 || target >= logits.rows())
      throw Error(ErrorCode::kBadTarget, "softmax_xent: target id outside vocabulary");
    const auto col = logits.col(p);
    const Scalar m = col.maxCoeff();
    const auto e = (col.array() - m).exp();
    const Scalar z = e.sum();
    out.loss += std::log(z) - (col(target) - m);
    out.grad.col(p) = (e / z).matrix();
    out.grad(target, p) -= Scalar(1);
  }
  out.loss *= scale;
  out.grad *= scale;
  return out;
}

}  // namespace dnas::nn
