#pragma once

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace claire {

// Errors map to CLI exit codes: config_error -> 2, numerical_error -> 3.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct invalid_input_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct numerical_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense row-major double tensor. Feature maps use NCHW order.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(count(shape_), fill) {}

    static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data) {
        if (count(shape) != data.size())
            throw invalid_input_error("Tensor::from_data: shape/data size mismatch");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2-D access (H, W)
    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    // 3-D access (C, H, W)
    double& at(std::size_t c, std::size_t i, std::size_t j) {
        return data_[(c * shape_[1] + i) * shape_[2] + j];
    }
    double at(std::size_t c, std::size_t i, std::size_t j) const {
        return data_[(c * shape_[1] + i) * shape_[2] + j];
    }

    // 4-D access (N, C, H, W)
    double& at(std::size_t n, std::size_t c, std::size_t i, std::size_t j) {
        return data_[((n * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
    }
    double at(std::size_t n, std::size_t c, std::size_t i, std::size_t j) const {
        return data_[((n * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(0.0); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < shape_.size(); ++i)
            s += (i ? "," : "") + std::to_string(shape_[i]);
        return s + ")";
    }

private:
    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

/// Integer label map, H x W.
class LabelMap {
public:
    LabelMap() = default;
    LabelMap(std::size_t h, std::size_t w, int fill = 0) : h_(h), w_(w), data_(h * w, fill) {}

    std::size_t height() const { return h_; }
    std::size_t width() const { return w_; }
    std::size_t numel() const { return data_.size(); }

    int& at(std::size_t i, std::size_t j) { return data_[i * w_ + j]; }
    int at(std::size_t i, std::size_t j) const { return data_[i * w_ + j]; }

    std::vector<int>& vec() { return data_; }
    const std::vector<int>& vec() const { return data_; }

private:
    std::size_t h_ = 0, w_ = 0;
    std::vector<int> data_;
};

}  // namespace claire
