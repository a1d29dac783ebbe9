/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#pragma once

#include "scamap/error.hpp"

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <new>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace scamap::nn {

/// Allocator that pins tensor storage to 64-byte boundaries. Eigen splits a
/// mapped reduction into a scalar head and a vector body at the first aligned
/// address, so the heap placement of a buffer would otherwise leak into float
/// rounding and make repeated runs differ in the last bits. With a fixed
/// alignment the split depends only on the tensor shape and results are
/// bitwise reproducible.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::size_t kAlignment = 64;

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U> &) noexcept {}

    T *allocate(std::size_t n) {
        return static_cast<T *>(::operator new(n * sizeof(T), std::align_val_t{kAlignment}));
    }
    void deallocate(T *p, std::size_t) noexcept {
        ::operator delete(p, std::align_val_t{kAlignment});
    }

    friend bool operator==(const AlignedAllocator &, const AlignedAllocator &) { return true; }
};

template <typename T>
using AlignedVec = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major tensor. Templated on the scalar so the same layer code
/// runs in float for training and in double for finite-difference checks.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    AlignedVec<T> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        v.assign(numel_of(shape), T(0));
    }
    Tensor(std::initializer_list<int> s) : Tensor(std::vector<int>(s)) {}

    static std::size_t numel_of(const std::vector<int> &s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d <= 0)
                throw Error::internal("tensor dimension must be positive");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t numel() const { return v.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    T *data() { return v.data(); }
    const T *data() const { return v.data(); }

    void fill(T x) { std::fill(v.begin(), v.end(), x); }

    /// Reinterprets the flat buffer under a new shape of equal element count.
    void reshape(std::vector<int> s) {
        if (numel_of(s) != v.size())
            throw Error::internal("reshape changes element count");
        shape = std::move(s);
    }

    bool same_shape(const Tensor &o) const { return shape == o.shape; }
};

/// Trainable tensor paired with its gradient accumulator.
template <typename T>
struct Param {
    Tensor<T> value;
    Tensor<T> grad;

    explicit Param(std::vector<int> shape) : value(shape), grad(std::move(shape)) {}
    Param() = default;
};

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using MapMat = Eigen::Map<MatX<T>>;
template <typename T>
using CMapMat = Eigen::Map<const MatX<T>>;
template <typename T>
using MapVec = Eigen::Map<VecX<T>>;
template <typename T>
using CMapVec = Eigen::Map<const VecX<T>>;

/// Views a tensor's flat buffer as a rows x cols row-major matrix.
template <typename T>
MapMat<T> as_matrix(Tensor<T> &t, int rows, int cols) {
    if (static_cast<std::size_t>(rows) * cols != t.numel())
        throw Error::internal("matrix view does not cover the tensor");
    return MapMat<T>(t.data(), rows, cols);
}

template <typename T>
CMapMat<T> as_matrix(const Tensor<T> &t, int rows, int cols) {
    if (static_cast<std::size_t>(rows) * cols != t.numel())
        throw Error::internal("matrix view does not cover the tensor");
    return CMapMat<T>(t.data(), rows, cols);
}

inline std::string shape_string(const std::vector<int> &s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i)
        out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

} // namespace scamap::nn
