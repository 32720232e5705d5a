#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "mcnn/common.hpp"

namespace mcnn {

// Dense N-dimensional array, contiguous row-major. Rank-4 tensors used as
// images or feature maps are interpreted NCHW. Storage is owned and never
// aliased; there are no views or strides, so every reduction visits
// elements in one fixed left-to-right order and results are bitwise
// deterministic on a given platform.
template <typename T>
class Tensor {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                  "Tensor supports f32 and f64 only");

  public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, T fill = T(0))
        : shape_(std::move(shape)), data_(numel_of(shape_), fill) {}

    Tensor(std::vector<std::size_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check_arg(data_.size() == numel_of(shape_),
                  "tensor: data length does not match shape product");
    }

    static Tensor full(std::vector<std::size_t> shape, T value) {
        return Tensor(std::move(shape), value);
    }
    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor ones(std::vector<std::size_t> shape) {
        return Tensor(std::move(shape), T(1));
    }
    static Tensor scalar(T value) { return Tensor({1}, value); }

    static std::size_t numel_of(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t e : shape) n *= e;
        return n;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size(std::size_t dim) const { return shape_.at(dim); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // NCHW element access for rank-4 tensors.
    T& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    T& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    const T& at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    // Reinterpret as a new shape with the same element count. Contiguous
    // row-major storage makes this a metadata change only.
    Tensor reshaped(std::vector<std::size_t> shape) const {
        check_arg(numel_of(shape) == numel(), "reshape: element count mismatch");
        return Tensor(std::move(shape), data_);
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) os << ",";
            os << shape_[i];
        }
        os << "]";
        return os.str();
    }

  private:
    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

namespace detail {
template <typename T, typename Op>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, Op op, const char* name) {
    check_arg(a.same_shape(b),
              std::string(name) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (std::size_t i = 0; i < a.numel(); ++i) po[i] = op(pa[i], pb[i]);
    return out;
}
}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::elementwise(a, b, [](T x, T y) { return x + y; }, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::elementwise(a, b, [](T x, T y) { return x - y; }, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::elementwise(a, b, [](T x, T y) { return x * y; }, "mul");
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
    check_arg(a.same_shape(b), "add_inplace: shape mismatch");
    T* pa = a.data();
    const T* pb = b.data();
    for (std::size_t i = 0; i < a.numel(); ++i) pa[i] += pb[i];
}

template <typename T>
void scale_inplace(Tensor<T>& a, T s) {
    T* pa = a.data();
    for (std::size_t i = 0; i < a.numel(); ++i) pa[i] *= s;
}

// sqrt(sum of squares across every element of every tensor). Accumulated
// in f64 left to right so the result is invariant under re-partitioning
// of the same elements.
template <typename T>
double global_l2_norm(const std::vector<const Tensor<T>*>& tensors) {
    check_arg(!tensors.empty(), "global_l2_norm: empty tensor list");
    double sq = 0.0;
    for (const Tensor<T>* t : tensors) {
        const T* p = t->data();
        for (std::size_t i = 0; i < t->numel(); ++i) {
            double v = static_cast<double>(p[i]);
            sq += v * v;
        }
    }
    return std::sqrt(sq);
}

template <typename T>
double sum_f64(const Tensor<T>& t) {
    double s = 0.0;
    const T* p = t.data();
    for (std::size_t i = 0; i < t.numel(); ++i) s += static_cast<double>(p[i]);
    return s;
}

template <typename T>
const char* precision_name() {
    if constexpr (std::is_same_v<T, float>) return "f32";
    else return "f64";
}

template <typename T, typename U>
Tensor<T> cast_tensor(const Tensor<U>& src) {
    Tensor<T> out(src.shape());
    for (std::size_t i = 0; i < src.numel(); ++i) out[i] = static_cast<T>(src[i]);
    return out;
}

}  // namespace mcnn
