#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "morse/rng.hpp"
#include "morse/tensor.hpp"

namespace morse {

/// Parameters of one LSTM cell. The four gate blocks are stacked along
/// the first axis in the fixed order: input, forget, cell candidate,
/// output. The forget-gate bias block is initialized to 1.
struct LSTMCellParams {
    Tensor w_x;  // (4H, In)
    Tensor w_h;  // (4H, H)
    Tensor b;    // (4H)

    size_t hidden_size() const { return w_h.cols(); }
    size_t input_size() const { return w_x.cols(); }
};

LSTMCellParams lstm_params_zeros(size_t input_size, size_t hidden_size);
LSTMCellParams lstm_params_init(size_t input_size, size_t hidden_size, Rng& rng);

/// Everything the backward pass needs: inputs plus the post-activation
/// gate values of one step.
struct LstmCache {
    Tensor x, h_prev, c_prev;
    Tensor gi, gf, gg, go;  // sigmoid/tanh gate activations
    Tensor c, tanh_c, h;
};

struct LstmStepOut {
    Tensor h, c;
};

/// h, c = LSTM(x, h_prev, c_prev). No peephole connections.
LstmStepOut lstm_step(const LSTMCellParams& p, const Tensor& x, const Tensor& h_prev,
                      const Tensor& c_prev, LstmCache* cache = nullptr);

struct LstmInputGrads {
    Tensor dx, dh_prev, dc_prev;
};

/// Analytic gradients for one step. Parameter gradients accumulate into
/// `grads` (same shapes as the cell parameters); input gradients are
/// returned so callers can chain steps backward through time.
LstmInputGrads lstm_backward(const LSTMCellParams& p, const LstmCache& cache, const Tensor& dh,
                             const Tensor& dc, LSTMCellParams& grads);

struct SoftmaxXent {
    double loss;
    Tensor probs;
    Tensor dlogits;  // probs - onehot(target)
};

/// Numerically stabilized softmax cross-entropy over a 1-D logit vector.
SoftmaxXent softmax_xent(const Tensor& logits, size_t target);

/// Inverted dropout: scales kept activations by 1/(1-rate) during
/// training so inference is an identity map.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training);

/// Mask with entries 0 or 1/(1-rate); multiply to apply, multiply again
/// with the upstream gradient in the backward pass.
Tensor dropout_mask(size_t n, double rate, Rng& rng);

Tensor relu(const Tensor& x);

/// Uniform Xavier/Glorot tensor: bound sqrt(6/(fan_in+fan_out)) with
/// fan_in = last dimension, fan_out = first dimension. 1-D shapes are
/// biases and come back zero (forget-gate blocks are set by the LSTM
/// initializer).
Tensor xavier_init(const std::vector<size_t>& shape, Rng& rng);

void sgd_step(Tensor& param, const Tensor& grad, double lr);

double global_grad_norm(const std::vector<std::pair<std::string, const Tensor*>>& grads);

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0;
    size_t worst_index = 0;
    double analytic = 0;
    double numeric = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0;
    double tolerance = 0;
    bool passed() const { return max_rel_err < tolerance; }
    std::string to_string() const;
};

/// Central finite differences against supplied analytic gradients.
/// `loss_fn` must be a deterministic function of the current parameter
/// values (dropout off). Relative error uses a small denominator floor
/// so exact-zero gradients compare cleanly against FD noise.
GradCheckReport grad_check(const std::function<double()>& loss_fn,
                           const std::vector<std::pair<std::string, Tensor*>>& params,
                           const std::vector<std::pair<std::string, const Tensor*>>& analytic,
                           double epsilon, double tolerance);

}  // namespace morse
