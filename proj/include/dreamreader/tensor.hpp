// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "dreamreader/errors.hpp"

namespace dreamreader {

enum class Dtype { f32 };

inline const char* dtype_name(Dtype d) { return d == Dtype::f32 ? "f32" : "?"; }

using MatXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatXf = Eigen::Map<MatXf>;
using MapConstMatXf = Eigen::Map<const MatXf>;

// Dense row-major float tensor. Activations, latents and images are all
// carried in this form; Eigen maps provide the 2-D views the math runs on.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {}

    static Tensor zeros(std::vector<int> shape) {
        int64_t n = 1;
        for (int s : shape) n *= s;
        return Tensor(std::move(shape), std::vector<float>(static_cast<size_t>(n), 0.0f));
    }

    int64_t size() const {
        return std::accumulate(shape.begin(), shape.end(), int64_t{1},
                               [](int64_t a, int b) { return a * b; });
    }

    int rank() const { return static_cast<int>(shape.size()); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    MapMatXf as_matrix(Eigen::Index rows, Eigen::Index cols) {
        return MapMatXf(data.data(), rows, cols);
    }
    MapConstMatXf as_matrix(Eigen::Index rows, Eigen::Index cols) const {
        return MapConstMatXf(data.data(), rows, cols);
    }
    Eigen::Map<Eigen::VectorXf> as_vector() {
        return Eigen::Map<Eigen::VectorXf>(data.data(), static_cast<Eigen::Index>(data.size()));
    }
    Eigen::Map<const Eigen::VectorXf> as_vector() const {
        return Eigen::Map<const Eigen::VectorXf>(data.data(),
                                                 static_cast<Eigen::Index>(data.size()));
    }

    bool operator==(const Tensor& o) const { return shape == o.shape && data == o.data; }
};

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + ")";
}

// Slice index i along axis 0. The block is contiguous in row-major layout,
// which is what makes per-head addressing cheap.
inline Tensor slice_axis0(const Tensor& t, int i) {
    require(t.rank() >= 1 && i >= 0 && i < t.shape[0], Errc::index_out_of_range,
            "axis-0 slice " + std::to_string(i) + " of " + shape_str(t.shape));
    std::vector<int> out_shape(t.shape.begin() + 1, t.shape.end());
    int64_t block = t.size() / t.shape[0];
    return Tensor(out_shape,
                  std::vector<float>(t.data.begin() + i * block, t.data.begin() + (i + 1) * block));
}

inline void assign_axis0(Tensor& t, int i, const Tensor& value) {
    int64_t block = t.size() / t.shape[0];
    require(value.size() == block, Errc::shape_mismatch, "axis-0 assign size");
    std::copy(value.data.begin(), value.data.end(), t.data.begin() + i * block);
}

namespace detail {
inline std::vector<int64_t> row_major_strides(const std::vector<int>& shape) {
    std::vector<int64_t> strides(shape.size());
    int64_t s = 1;
    for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
        strides[static_cast<size_t>(i)] = s;
        s *= shape[static_cast<size_t>(i)];
    }
    return strides;
}
}  // namespace detail

// Collects every d-vector along `feature_axis` into an N x d matrix.
// Vector order is the row-major order of the remaining axes.
inline Eigen::MatrixXf gather_feature_vectors(const Tensor& t, int feature_axis) {
    require(feature_axis >= 0 && feature_axis < t.rank(), Errc::dim_mismatch,
            "feature axis " + std::to_string(feature_axis) + " of " + shape_str(t.shape));
    const int d = t.shape[static_cast<size_t>(feature_axis)];
    const int64_t n = t.size() / d;
    const auto strides = detail::row_major_strides(t.shape);
    const int64_t fstride = strides[static_cast<size_t>(feature_axis)];

    Eigen::MatrixXf out(n, d);
    std::vector<int> idx(t.shape.size(), 0);
    for (int64_t row = 0; row < n; ++row) {
        int64_t base = 0;
        for (int a = 0; a < t.rank(); ++a)
            if (a != feature_axis) base += idx[static_cast<size_t>(a)] * strides[static_cast<size_t>(a)];
        for (int j = 0; j < d; ++j) out(row, j) = t.data[static_cast<size_t>(base + j * fstride)];
        // advance the non-feature multi-index, last axis fastest
        for (int a = t.rank() - 1; a >= 0; --a) {
            if (a == feature_axis) continue;
            if (++idx[static_cast<size_t>(a)] < t.shape[static_cast<size_t>(a)]) break;
            idx[static_cast<size_t>(a)] = 0;
        }
    }
    return out;
}

inline void scatter_feature_vectors(Tensor& t, int feature_axis, const Eigen::MatrixXf& rows) {
    const int d = t.shape[static_cast<size_t>(feature_axis)];
    const int64_t n = t.size() / d;
    require(rows.rows() == n && rows.cols() == d, Errc::shape_mismatch, "scatter_feature_vectors");
    const auto strides = detail::row_major_strides(t.shape);
    const int64_t fstride = strides[static_cast<size_t>(feature_axis)];

    std::vector<int> idx(t.shape.size(), 0);
    for (int64_t row = 0; row < n; ++row) {
        int64_t base = 0;
        for (int a = 0; a < t.rank(); ++a)
            if (a != feature_axis) base += idx[static_cast<size_t>(a)] * strides[static_cast<size_t>(a)];
        for (int j = 0; j < d; ++j) t.data[static_cast<size_t>(base + j * fstride)] = rows(row, j);
        for (int a = t.rank() - 1; a >= 0; --a) {
            if (a == feature_axis) continue;
            if (++idx[static_cast<size_t>(a)] < t.shape[static_cast<size_t>(a)]) break;
            idx[static_cast<size_t>(a)] = 0;
        }
    }
}

// Mean feature vector over all non-feature axes.
inline Eigen::VectorXf mean_feature_vector(const Tensor& t, int feature_axis) {
    Eigen::MatrixXf rows = gather_feature_vectors(t, feature_axis);
    return rows.colwise().mean();
}

// h += strength * direction, with direction broadcast across non-feature axes.
inline void add_direction_broadcast(Tensor& t, int feature_axis, const Eigen::VectorXf& direction,
                                    float strength) {
    require(direction.size() == t.shape[static_cast<size_t>(feature_axis)], Errc::dim_mismatch,
            "direction dim " + std::to_string(direction.size()) + " vs feature dim " +
                std::to_string(t.shape[static_cast<size_t>(feature_axis)]));
    Eigen::MatrixXf rows = gather_feature_vectors(t, feature_axis);
    rows.rowwise() += strength * direction.transpose();
    scatter_feature_vectors(t, feature_axis, rows);
}

}  // namespace dreamreader
