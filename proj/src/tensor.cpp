#include "morse/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace morse {

namespace {
size_t shape_size(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
}
}  // namespace

Tensor::Tensor(std::vector<size_t> shape) : shape_(std::move(shape)) {
    if (shape_.empty()) throw std::invalid_argument("Tensor: empty shape");
    data_.assign(shape_size(shape_), 0.0);
}

Tensor::Tensor(std::initializer_list<size_t> shape) : Tensor(std::vector<size_t>(shape)) {}

void Tensor::fill(Real v) {
    for (auto& x : data_) x = v;
}

bool Tensor::all_finite() const {
    for (Real x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

void matvec(const Tensor& w, const Real* x, Real* y) {
    const size_t m = w.rows(), n = w.cols();
    const Real* wd = w.data();
    for (size_t i = 0; i < m; ++i) {
        Real acc = 0;
        const Real* wrow = wd + i * n;
        for (size_t j = 0; j < n; ++j) acc += wrow[j] * x[j];
        y[i] = acc;
    }
}

void matvec_transpose_acc(const Tensor& w, const Real* d, Real* y) {
    const size_t m = w.rows(), n = w.cols();
    const Real* wd = w.data();
    for (size_t i = 0; i < m; ++i) {
        const Real di = d[i];
        if (di == 0) continue;
        const Real* wrow = wd + i * n;
        for (size_t j = 0; j < n; ++j) y[j] += wrow[j] * di;
    }
}

void outer_acc(Tensor& w, const Real* d, const Real* x) {
    const size_t m = w.rows(), n = w.cols();
    Real* wd = w.data();
    for (size_t i = 0; i < m; ++i) {
        const Real di = d[i];
        if (di == 0) continue;
        Real* wrow = wd + i * n;
        for (size_t j = 0; j < n; ++j) wrow[j] += di * x[j];
    }
}

void add_inplace(Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add_inplace: shape mismatch");
    for (size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

Tensor concat(const Tensor& a, const Tensor& b) {
    Tensor out({a.size() + b.size()});
    for (size_t i = 0; i < a.size(); ++i) out[i] = a[i];
    for (size_t i = 0; i < b.size(); ++i) out[a.size() + i] = b[i];
    return out;
}

}  // namespace morse
