#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "nledn/error.hpp"
#include "nledn/rng.hpp"

namespace nledn {

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

inline std::int64_t numel_of(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) n *= e;
    return n;
}

// Dense N-d array, row-major. Feature maps are (C,H,W); convolution
// kernels are (Cout,Cin,kH,kW); scalars are shape {1}.
template <class T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;

    TensorT() = default;

    explicit TensorT(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
        for (int e : shape) {
            if (e < 1) throw Error("tensor extent must be >= 1, got shape " + shape_str(shape));
        }
        data.assign(static_cast<std::size_t>(numel_of(shape)), fill);
    }

    TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<std::int64_t>(data.size()) != numel_of(shape)) {
            throw Error("tensor data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
        }
    }

    static TensorT scalar(T v) { return TensorT({1}, std::vector<T>{v}); }

    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

    T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    // (C,H,W) accessors
    T& at3(int c, int h, int w) {
        return data[(static_cast<std::size_t>(c) * shape[1] + h) * shape[2] + w];
    }
    const T& at3(int c, int h, int w) const {
        return data[(static_cast<std::size_t>(c) * shape[1] + h) * shape[2] + w];
    }

    T* plane(int c) { return data.data() + static_cast<std::size_t>(c) * shape[1] * shape[2]; }
    const T* plane(int c) const {
        return data.data() + static_cast<std::size_t>(c) * shape[1] * shape[2];
    }

    bool same_shape(const TensorT& other) const { return shape == other.shape; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    void fill_uniform(Rng& rng, T lo, T hi) {
        for (auto& v : data) v = static_cast<T>(rng.uniform(lo, hi));
    }

    template <class U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Tensor = TensorT<float>;

template <class T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (!a.same_shape(b)) {
        throw Error(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                    shape_str(b.shape));
    }
}

}  // namespace nledn
