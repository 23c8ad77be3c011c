#pragma once

#include <cmath>

#include "dnas/nn/tensor.hpp"

namespace dnas::nn {

namespace detail {

// Both activations go through exp, which Eigen vectorizes for double.
template <typename Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return (Scalar(1) + (-x).exp()).inverse();
}

template <typename Derived>
auto fast_tanh(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return Scalar(2) * (Scalar(1) + (Scalar(-2) * x).exp()).inverse() - Scalar(1);
}

}  // namespace detail

enum class Activation { kIdentity, kRelu, kTanh };

template <typename Scalar>
struct DenseCache {
  Matrix<Scalar> input;
  Matrix<Scalar> output;  // post-activation
  Activation activation = Activation::kIdentity;
};

// y = act(W x + b) for x: in x batch, W: out x in, b: out x 1.
template <typename Derived, typename Scalar = typename Derived::Scalar>
Matrix<Scalar> dense_forward(const Eigen::MatrixBase<Derived>& x, const Matrix<Scalar>& weight,
                             const Matrix<Scalar>& bias, Activation act,
                             DenseCache<Scalar>* cache = nullptr) {
  require_shape(weight.cols() == x.rows(), "dense: weight columns != input rows");
  require_shape(bias.rows() == weight.rows() && bias.cols() == 1, "dense: bias shape");
  Matrix<Scalar> y = weight * x;
  y.colwise() += bias.col(0);
  switch (act) {
    case Activation::kRelu: y = y.cwiseMax(Scalar(0)); break;
    case Activation::kTanh: y = detail::fast_tanh(y.array()).matrix(); break;
    case Activation::kIdentity: break;
  }
  if (cache) {
    cache->input = x;
    cache->output = y;
    cache->activation = act;
  }
  return y;
}

// Accumulates into grad_weight / grad_bias and returns dL/dx.
template <typename Scalar>
Matrix<Scalar> dense_backward(const Matrix<Scalar>& grad_out, const Matrix<Scalar>& weight,
                              const DenseCache<Scalar>& cache, Matrix<Scalar>& grad_weight,
                              Matrix<Scalar>& grad_bias) {
  require_same_shape(grad_out, cache.output, "dense backward: grad shape");
  Matrix<Scalar> g = grad_out;
  switch (cache.activation) {
    case Activation::kRelu:
      g = (cache.output.array() > Scalar(0)).select(g, Scalar(0));
      break;
    case Activation::kTanh:
      g.array() *= Scalar(1) - cache.output.array().square();
      break;
    case Activation::kIdentity: break;
  }
  grad_weight.noalias() += g * cache.input.transpose();
  grad_bias.col(0) += g.rowwise().sum();
  return weight.transpose() * g;
}

// ---- LSTM ------------------------------------------------------------------
//
// Gate rows are stacked [input; forget; candidate; output], each hidden rows:
//   i = sig(.), f = sig(.), g = tanh(.), o = sig(.)
//   c' = f * c + i * g,  h' = o * tanh(c')

template <typename Scalar>
struct LstmWeights {
  const Matrix<Scalar>& w_x;  // 4H x in
  const Matrix<Scalar>& w_h;  // 4H x H
  const Matrix<Scalar>& b;    // 4H x 1
};

template <typename Scalar>
struct LstmGrads {
  Matrix<Scalar>& w_x;
  Matrix<Scalar>& w_h;
  Matrix<Scalar>& b;
};

template <typename Scalar>
struct LstmState {
  Matrix<Scalar> h;  // H x batch
  Matrix<Scalar> c;
};

namespace detail {

// In-place activation of stacked pre-activations.
template <typename Scalar>
void activate_gates(Matrix<Scalar>& gates, Eigen::Index hidden) {
  gates.topRows(2 * hidden) = sigmoid(gates.topRows(2 * hidden).array()).matrix();
  gates.middleRows(2 * hidden, hidden) = fast_tanh(gates.middleRows(2 * hidden, hidden).array()).matrix();
  gates.bottomRows(hidden) = sigmoid(gates.bottomRows(hidden).array()).matrix();
}

template <typename Scalar>
void check_lstm(const LstmWeights<Scalar>& w, Eigen::Index in_rows, Eigen::Index h_rows) {
  const Eigen::Index hidden = w.w_h.cols();
  require_shape(w.w_h.rows() == 4 * hidden, "lstm: w_h must be 4H x H");
  require_shape(w.w_x.rows() == 4 * hidden && w.w_x.cols() == in_rows, "lstm: w_x shape");
  require_shape(w.b.rows() == 4 * hidden && w.b.cols() == 1, "lstm: bias shape");
  require_shape(h_rows == hidden, "lstm: state size != hidden size");
}

}  // namespace detail

template <typename Scalar>
struct LstmStepCache {
  Matrix<Scalar> x, h_prev, c_prev, gates, c;
};

template <typename Derived, typename Scalar = typename Derived::Scalar>
LstmState<Scalar> lstm_step(const Eigen::MatrixBase<Derived>& x, const LstmState<Scalar>& state,
                            const LstmWeights<Scalar>& w, LstmStepCache<Scalar>* cache = nullptr) {
  detail::check_lstm(w, x.rows(), state.h.rows());
  require_same_shape(state.h, state.c, "lstm: h/c shape");
  require_shape(x.cols() == state.h.cols(), "lstm: batch mismatch");
  const Eigen::Index hidden = w.w_h.cols();
  Matrix<Scalar> gates = w.w_x * x + w.w_h * state.h;
  gates.colwise() += w.b.col(0);
  detail::activate_gates(gates, hidden);
  LstmState<Scalar> next;
  next.c = gates.middleRows(hidden, hidden).cwiseProduct(state.c) +
           gates.topRows(hidden).cwiseProduct(gates.middleRows(2 * hidden, hidden));
  next.h = gates.bottomRows(hidden).cwiseProduct(detail::fast_tanh(next.c.array()).matrix());
  if (cache) *cache = {x, state.h, state.c, std::move(gates), next.c};
  return next;
}

template <typename Scalar>
struct LstmStepGrads {
  Matrix<Scalar> x, h_prev, c_prev;
};

namespace detail {

// Gradient w.r.t. stacked pre-activations, given dL/dh' and dL/dc'.
// Also returns dL/dc through c_prev_grad.
template <typename Scalar>
Matrix<Scalar> lstm_gate_backward(const Matrix<Scalar>& dh, const Matrix<Scalar>& dc_next,
                                  const Eigen::Ref<const Matrix<Scalar>>& gates,
                                  const Eigen::Ref<const Matrix<Scalar>>& c,
                                  const Eigen::Ref<const Matrix<Scalar>>& c_prev,
                                  Matrix<Scalar>& c_prev_grad) {
  const Eigen::Index hidden = c.rows();
  const auto i = gates.topRows(hidden).array();
  const auto f = gates.middleRows(hidden, hidden).array();
  const auto g = gates.middleRows(2 * hidden, hidden).array();
  const auto o = gates.bottomRows(hidden).array();
  const Matrix<Scalar> tanh_c = fast_tanh(c.array()).matrix();
  const auto tc = tanh_c.array();

  Matrix<Scalar> dc = dc_next;
  dc.array() += dh.array() * o * (Scalar(1) - tc.square());
  Matrix<Scalar> d(4 * hidden, c.cols());
  d.topRows(hidden) = (dc.array() * g * i * (Scalar(1) - i)).matrix();
  d.middleRows(hidden, hidden) = (dc.array() * c_prev.array() * f * (Scalar(1) - f)).matrix();
  d.middleRows(2 * hidden, hidden) = (dc.array() * i * (Scalar(1) - g.square())).matrix();
  d.bottomRows(hidden) = (dh.array() * tc * o * (Scalar(1) - o)).matrix();
  c_prev_grad = (dc.array() * f).matrix();
  return d;
}

}  // namespace detail

// Accumulates weight gradients; returns gradients for x, h_prev, c_prev.
template <typename Scalar>
LstmStepGrads<Scalar> lstm_step_backward(const Matrix<Scalar>& dh, const Matrix<Scalar>& dc,
                                         const LstmStepCache<Scalar>& cache,
                                         const LstmWeights<Scalar>& w, LstmGrads<Scalar> grads) {
  require_same_shape(dh, cache.c, "lstm backward: dh shape");
  require_same_shape(dc, cache.c, "lstm backward: dc shape");
  LstmStepGrads<Scalar> out;
  const Matrix<Scalar> d =
      detail::lstm_gate_backward<Scalar>(dh, dc, cache.gates, cache.c, cache.c_prev, out.c_prev);
  grads.w_x.noalias() += d * cache.x.transpose();
  grads.w_h.noalias() += d * cache.h_prev.transpose();
  grads.b.col(0) += d.rowwise().sum();
  out.x = w.w_x.transpose() * d;
  out.h_prev = w.w_h.transpose() * d;
  return out;
}

// Whole-sequence LSTM. Inputs for all steps are packed column-blockwise,
// inputs: in x (steps * batch), block t = columns [t*batch, (t+1)*batch).
// Input projections and weight gradients are computed as single products.
template <typename Scalar>
struct LstmSequenceCache {
  Eigen::Index steps = 0, batch = 0;
  Matrix<Scalar> inputs;
  Matrix<Scalar> h0, c0;
  Matrix<Scalar> gates;    // 4H x (steps * batch), post-activation
  Matrix<Scalar> cells;    // H x (steps * batch)
  Matrix<Scalar> outputs;  // H x (steps * batch)
};

template <typename Scalar>
Matrix<Scalar> lstm_sequence_forward(const Matrix<Scalar>& inputs, Eigen::Index steps,
                                     const LstmState<Scalar>& initial, const LstmWeights<Scalar>& w,
                                     LstmSequenceCache<Scalar>& cache) {
  detail::check_lstm(w, inputs.rows(), initial.h.rows());
  const Eigen::Index hidden = w.w_h.cols();
  const Eigen::Index batch = initial.h.cols();
  require_shape(inputs.cols() == steps * batch, "lstm sequence: inputs must be in x (steps*batch)");
  cache.steps = steps;
  cache.batch = batch;
  cache.inputs = inputs;
  cache.h0 = initial.h;
  cache.c0 = initial.c;
  cache.gates.noalias() = w.w_x * inputs;
  cache.gates.colwise() += w.b.col(0);
  cache.cells.resize(hidden, steps * batch);
  cache.outputs.resize(hidden, steps * batch);
  Matrix<Scalar> h = initial.h, c = initial.c;
  Matrix<Scalar> block(4 * hidden, batch);
  for (Eigen::Index t = 0; t < steps; ++t) {
    block = cache.gates.middleCols(t * batch, batch);
    block.noalias() += w.w_h * h;
    detail::activate_gates(block, hidden);
    c = block.middleRows(hidden, hidden).cwiseProduct(c) +
        block.topRows(hidden).cwiseProduct(block.middleRows(2 * hidden, hidden));
    h = block.bottomRows(hidden).cwiseProduct(detail::fast_tanh(c.array()).matrix());
    cache.gates.middleCols(t * batch, batch) = block;
    cache.cells.middleCols(t * batch, batch) = c;
    cache.outputs.middleCols(t * batch, batch) = h;
  }
  return cache.outputs;
}

template <typename Scalar>
struct LstmSequenceGrads {
  Matrix<Scalar> inputs;  // in x (steps * batch)
  Matrix<Scalar> h0, c0;
};

// output_grads: H x (steps * batch), dL/dh_t for every step.
template <typename Scalar>
LstmSequenceGrads<Scalar> lstm_sequence_backward(const Matrix<Scalar>& output_grads,
                                                 const LstmSequenceCache<Scalar>& cache,
                                                 const LstmWeights<Scalar>& w,
                                                 LstmGrads<Scalar> grads) {
  require_same_shape(output_grads, cache.outputs, "lstm sequence backward: grad shape");
  const Eigen::Index hidden = w.w_h.cols();
  const Eigen::Index batch = cache.batch;
  const Eigen::Index steps = cache.steps;
  Matrix<Scalar> d_pre(4 * hidden, steps * batch);
  Matrix<Scalar> dh_next = Matrix<Scalar>::Zero(hidden, batch);
  Matrix<Scalar> dc_next = Matrix<Scalar>::Zero(hidden, batch);
  Matrix<Scalar> dc_prev, dh;
  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    dh = output_grads.middleCols(t * batch, batch) + dh_next;
    const auto c_prev = t > 0 ? cache.cells.middleCols((t - 1) * batch, batch)
                              : cache.c0.middleCols(0, batch);
    d_pre.middleCols(t * batch, batch) = detail::lstm_gate_backward<Scalar>(
        dh, dc_next, cache.gates.middleCols(t * batch, batch), cache.cells.middleCols(t * batch, batch),
        c_prev, dc_prev);
    dh_next.noalias() = w.w_h.transpose() * d_pre.middleCols(t * batch, batch);
    dc_next = dc_prev;
  }
  Matrix<Scalar> h_prev(hidden, steps * batch);
  h_prev.leftCols(batch) = cache.h0;
  if (steps > 1) h_prev.rightCols((steps - 1) * batch) = cache.outputs.leftCols((steps - 1) * batch);
  grads.w_x.noalias() += d_pre * cache.inputs.transpose();
  grads.w_h.noalias() += d_pre * h_prev.transpose();
  grads.b.col(0) += d_pre.rowwise().sum();
  LstmSequenceGrads<Scalar> out;
  out.inputs.noalias() = w.w_x.transpose() * d_pre;
  out.h0 = std::move(dh_next);
  out.c0 = std::move(dc_next);
  return out;
}

}  // namespace dnas::nn
