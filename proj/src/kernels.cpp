#include "morse/kernels.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "morse/util.hpp"

namespace morse {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_vec(const Tensor& t, size_t n, const char* what) {
    if (t.rank() != 1 || t.size() != n)
        throw std::invalid_argument(std::string("lstm: bad dimension for ") + what);
}

}  // namespace

LSTMCellParams lstm_params_zeros(size_t input_size, size_t hidden_size) {
    LSTMCellParams p;
    p.w_x = Tensor({4 * hidden_size, input_size});
    p.w_h = Tensor({4 * hidden_size, hidden_size});
    p.b = Tensor({4 * hidden_size});
    return p;
}

LSTMCellParams lstm_params_init(size_t input_size, size_t hidden_size, Rng& rng) {
    LSTMCellParams p;
    p.w_x = xavier_init({4 * hidden_size, input_size}, rng);
    p.w_h = xavier_init({4 * hidden_size, hidden_size}, rng);
    p.b = Tensor({4 * hidden_size});
    // forget-gate block sits second in the (input, forget, cell, output) layout
    for (size_t i = hidden_size; i < 2 * hidden_size; ++i) p.b[i] = 1.0;
    return p;
}

LstmStepOut lstm_step(const LSTMCellParams& p, const Tensor& x, const Tensor& h_prev,
                      const Tensor& c_prev, LstmCache* cache) {
    const size_t h_dim = p.hidden_size();
    check_vec(x, p.input_size(), "x");
    check_vec(h_prev, h_dim, "h_prev");
    check_vec(c_prev, h_dim, "c_prev");

    Tensor a({4 * h_dim});
    matvec(p.w_x, x.data(), a.data());
    {
        Tensor ah({4 * h_dim});
        matvec(p.w_h, h_prev.data(), ah.data());
        for (size_t i = 0; i < a.size(); ++i) a[i] += ah[i] + p.b[i];
    }

    Tensor gi({h_dim}), gf({h_dim}), gg({h_dim}), go({h_dim});
    for (size_t i = 0; i < h_dim; ++i) {
        gi[i] = sigmoid(a[i]);
        gf[i] = sigmoid(a[h_dim + i]);
        gg[i] = std::tanh(a[2 * h_dim + i]);
        go[i] = sigmoid(a[3 * h_dim + i]);
    }

    Tensor c({h_dim}), tanh_c({h_dim}), h({h_dim});
    for (size_t i = 0; i < h_dim; ++i) {
        c[i] = gf[i] * c_prev[i] + gi[i] * gg[i];
        tanh_c[i] = std::tanh(c[i]);
        h[i] = go[i] * tanh_c[i];
    }

    if (cache) {
        cache->x = x;
        cache->h_prev = h_prev;
        cache->c_prev = c_prev;
        cache->gi = gi;
        cache->gf = gf;
        cache->gg = gg;
        cache->go = go;
        cache->c = c;
        cache->tanh_c = tanh_c;
        cache->h = h;
    }
    return LstmStepOut{std::move(h), std::move(c)};
}

LstmInputGrads lstm_backward(const LSTMCellParams& p, const LstmCache& cache, const Tensor& dh,
                             const Tensor& dc, LSTMCellParams& grads) {
    const size_t h_dim = p.hidden_size();
    if (cache.x.size() != p.input_size() || cache.h_prev.size() != h_dim)
        throw std::invalid_argument("lstm_backward: cache does not match parameters");
    check_vec(dh, h_dim, "dh");
    check_vec(dc, h_dim, "dc");

    Tensor da({4 * h_dim});
    LstmInputGrads out;
    out.dx = Tensor({p.input_size()});
    out.dh_prev = Tensor({h_dim});
    out.dc_prev = Tensor({h_dim});

    for (size_t i = 0; i < h_dim; ++i) {
        const double go = cache.go[i], gi = cache.gi[i], gf = cache.gf[i], gg = cache.gg[i];
        const double tc = cache.tanh_c[i];
        const double d_go = dh[i] * tc;
        const double dc_total = dc[i] + dh[i] * go * (1.0 - tc * tc);
        const double d_gi = dc_total * gg;
        const double d_gf = dc_total * cache.c_prev[i];
        const double d_gg = dc_total * gi;
        out.dc_prev[i] = dc_total * gf;
        da[i] = d_gi * gi * (1.0 - gi);
        da[h_dim + i] = d_gf * gf * (1.0 - gf);
        da[2 * h_dim + i] = d_gg * (1.0 - gg * gg);
        da[3 * h_dim + i] = d_go * go * (1.0 - go);
    }

    outer_acc(grads.w_x, da.data(), cache.x.data());
    outer_acc(grads.w_h, da.data(), cache.h_prev.data());
    for (size_t i = 0; i < da.size(); ++i) grads.b[i] += da[i];

    matvec_transpose_acc(p.w_x, da.data(), out.dx.data());
    matvec_transpose_acc(p.w_h, da.data(), out.dh_prev.data());
    return out;
}

SoftmaxXent softmax_xent(const Tensor& logits, size_t target) {
    if (logits.rank() != 1 || logits.size() == 0)
        throw std::invalid_argument("softmax_xent: logits must be a non-empty vector");
    if (target >= logits.size()) throw std::invalid_argument("softmax_xent: target out of range");

    double max_logit = logits[0];
    for (size_t i = 1; i < logits.size(); ++i) max_logit = std::max(max_logit, logits[i]);

    SoftmaxXent out;
    out.probs = Tensor({logits.size()});
    double denom = 0;
    for (size_t i = 0; i < logits.size(); ++i) {
        out.probs[i] = std::exp(logits[i] - max_logit);
        denom += out.probs[i];
    }
    for (size_t i = 0; i < logits.size(); ++i) out.probs[i] /= denom;

    out.loss = -(logits[target] - max_logit - std::log(denom));
    out.dlogits = out.probs;
    out.dlogits[target] -= 1.0;
    return out;
}

Tensor dropout_mask(size_t n, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
    Tensor mask({n});
    const double keep = 1.0 - rate;
    for (size_t i = 0; i < n; ++i) mask[i] = (rng.uniform() < rate) ? 0.0 : 1.0 / keep;
    return mask;
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
    if (!training || rate == 0.0) return x;
    Tensor mask = dropout_mask(x.size(), rate, rng);
    Tensor out = x;
    for (size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (size_t i = 0; i < out.size(); ++i)
        if (out[i] < 0) out[i] = 0;
    return out;
}

Tensor xavier_init(const std::vector<size_t>& shape, Rng& rng) {
    if (shape.empty()) throw std::invalid_argument("xavier_init: empty shape");
    Tensor t(shape);
    if (shape.size() == 1) return t;  // bias convention: zeros
    const double fan_out = static_cast<double>(shape.front());
    const double fan_in = static_cast<double>(shape.back());
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

void sgd_step(Tensor& param, const Tensor& grad, double lr) {
    if (!param.same_shape(grad)) throw std::invalid_argument("sgd_step: shape mismatch");
    for (size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
}

double global_grad_norm(const std::vector<std::pair<std::string, const Tensor*>>& grads) {
    double sq = 0;
    for (const auto& [name, g] : grads) {
        (void)name;
        for (size_t i = 0; i < g->size(); ++i) sq += (*g)[i] * (*g)[i];
    }
    return std::sqrt(sq);
}

std::string GradCheckReport::to_string() const {
    std::ostringstream os;
    os << "max_rel_err\t" << max_rel_err << "\ttolerance\t" << tolerance << "\t"
       << (passed() ? "PASS" : "FAIL") << "\n";
    for (const auto& e : entries) {
        os << e.name << "\t" << e.max_rel_err << "\tanalytic " << e.analytic << "\tnumeric "
           << e.numeric << "\tindex " << e.worst_index << "\n";
    }
    return os.str();
}

GradCheckReport grad_check(const std::function<double()>& loss_fn,
                           const std::vector<std::pair<std::string, Tensor*>>& params,
                           const std::vector<std::pair<std::string, const Tensor*>>& analytic,
                           double epsilon, double tolerance) {
    if (params.size() != analytic.size())
        throw std::invalid_argument("grad_check: params/analytic size mismatch");
    GradCheckReport report;
    report.tolerance = tolerance;
    // floor shields exact-zero gradients from FD truncation noise
    const double floor = 1e-6;

    for (size_t t = 0; t < params.size(); ++t) {
        Tensor* p = params[t].second;
        const Tensor* g = analytic[t].second;
        if (!p->same_shape(*g)) throw std::invalid_argument("grad_check: grad shape mismatch");
        GradCheckEntry entry;
        entry.name = params[t].first;
        for (size_t i = 0; i < p->size(); ++i) {
            const double saved = (*p)[i];
            (*p)[i] = saved + epsilon;
            const double up = loss_fn();
            (*p)[i] = saved - epsilon;
            const double down = loss_fn();
            (*p)[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("grad_check: non-finite loss at " + entry.name);
            const double numeric = (up - down) / (2.0 * epsilon);
            const double a = (*g)[i];
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_index = i;
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace morse
