#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace spikemix {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

// Dense row-major array of doubles. Activations use the [T, B, N, D] layout.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double value);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double* ptr() { return data_.data(); }
    const double* ptr() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::initializer_list<std::size_t> index);
    double at(std::initializer_list<std::size_t> index) const;

    double item() const;

    // Same data, new shape with equal element count.
    Tensor reshaped(Shape shape) const&;
    Tensor reshaped(Shape shape) &&;

    void fill(double value);
    bool all_finite() const;

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    std::size_t offset(std::initializer_list<std::size_t> index) const;

    Shape shape_;
    std::vector<double> data_;
};

namespace kernels {
// Row-major accumulate-into kernels: c[m,p] += op(a) * op(b).
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t p);
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t p);
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t p);
}  // namespace kernels

// Matrix product over the trailing two axes. `b` may be rank 2 (shared by
// every leading batch entry of `a`); otherwise leading axes must be equal.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// a += s * b
void axpy(Tensor& a, double s, const Tensor& b);

Tensor reduce_mean(const Tensor& x, std::size_t axis);
Tensor reduce_sum(const Tensor& x, std::size_t axis);
double sum(const Tensor& x);
double dot(const Tensor& a, const Tensor& b);
double norm2(const Tensor& x);
double max_abs_diff(const Tensor& a, const Tensor& b);

Tensor permute(const Tensor& x, std::span<const std::size_t> order);
Tensor permute(const Tensor& x, std::initializer_list<std::size_t> order);
std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> order);

enum class Mode { train, eval };

struct BatchNormState {
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    explicit BatchNormState(std::size_t channels = 0);
};

// Everything the backward rule of a train-mode batch norm needs.
struct BatchNormOutput {
    Tensor y;
    Tensor x_hat;
    std::vector<double> inv_std;
};

// Per-channel normalization over every axis except `channel_axis`
// (T, B and N are merged). Train mode uses batch statistics and updates the
// running estimates with `state.momentum`; eval mode uses running estimates.
BatchNormOutput batch_norm_full(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                BatchNormState& state, Mode mode, std::size_t channel_axis);
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  Mode mode, std::size_t channel_axis);
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  Mode mode);

// View of `x` as [outer, channels, inner] around `channel_axis`.
struct ChannelLayout {
    std::size_t outer = 1;
    std::size_t channels = 1;
    std::size_t inner = 1;
};
ChannelLayout channel_layout(const Shape& shape, std::size_t channel_axis);

}  // namespace spikemix
