#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace morse {

using Real = double;

/// Dense row-major tensor of doubles. The toolkit computes in double
/// precision throughout; gradient tolerances assume it.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<size_t> shape);
    Tensor(std::initializer_list<size_t> shape);

    static Tensor zeros(std::vector<size_t> shape) { return Tensor(std::move(shape)); }

    const std::vector<size_t>& shape() const { return shape_; }
    size_t rank() const { return shape_.size(); }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // 2-D accessors
    size_t rows() const { return shape_[0]; }
    size_t cols() const { return shape_[1]; }

    Real& operator[](size_t i) { return data_[i]; }
    Real operator[](size_t i) const { return data_[i]; }
    Real& operator()(size_t i, size_t j) { return data_[i * shape_[1] + j]; }
    Real operator()(size_t i, size_t j) const { return data_[i * shape_[1] + j]; }

    Real* data() { return data_.data(); }
    const Real* data() const { return data_.data(); }
    Real* row(size_t i) { return data_.data() + i * shape_[1]; }
    const Real* row(size_t i) const { return data_.data() + i * shape_[1]; }

    void fill(Real v);
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

private:
    std::vector<size_t> shape_;
    std::vector<Real> data_;
};

// y = W x  (W is m-by-n, x has n entries, y has m entries)
void matvec(const Tensor& w, const Real* x, Real* y);
// y += W^T d  (accumulates the transpose product)
void matvec_transpose_acc(const Tensor& w, const Real* d, Real* y);
// W += d (outer) x
void outer_acc(Tensor& w, const Real* d, const Real* x);

void add_inplace(Tensor& a, const Tensor& b);
Tensor concat(const Tensor& a, const Tensor& b);

}  // namespace morse
