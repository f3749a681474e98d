#include "spikemix/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "spikemix/error.hpp"

namespace spikemix {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
        throw ShapeError("tensor shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, value); }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw InvalidArgument("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
    }
    return shape_[axis];
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) {
        throw InvalidArgument("index rank " + std::to_string(index.size()) + " does not match shape " +
                              shape_str(shape_));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
        if (i >= shape_[axis]) throw InvalidArgument("index out of range for shape " + shape_str(shape_));
        off = off * shape_[axis] + i;
        ++axis;
    }
    return off;
}

double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const& {
    Tensor copy = *this;
    return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
    if (shape_size(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    shape_ = std::move(shape);
    return std::move(*this);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace kernels {

// c[m,p] += a[m,k] * b[k,p] for one batch entry, all row-major.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t p) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * p;
        const double* arow = a + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = b + kk * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m,p] += a[m,k] * b[p,k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t p) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * p;
        for (std::size_t j = 0; j < p; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] += acc;
        }
    }
}

// c[m,p] += a[k,m]^T * b[k,p]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t p) {
    for (std::size_t kk = 0; kk < k; ++kk) {
        const double* arow = a + kk * m;
        const double* brow = b + kk * p;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c + i * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace kernels

namespace {

using kernels::gemm_nn;
using kernels::gemm_nt;
using kernels::gemm_tn;

void transpose_into(const double* src, double* dst, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const std::size_t ar = a.rank();
    const std::size_t br = b.rank();
    const std::size_t m = transpose_a ? a.dim(ar - 1) : a.dim(ar - 2);
    const std::size_t ka = transpose_a ? a.dim(ar - 2) : a.dim(ar - 1);
    const std::size_t kb = transpose_b ? b.dim(br - 1) : b.dim(br - 2);
    const std::size_t p = transpose_b ? b.dim(br - 2) : b.dim(br - 1);
    const bool shared_b = br == 2;
    bool batch_ok = ka == kb;
    if (!shared_b) {
        batch_ok = batch_ok && ar == br && std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin());
    }
    if (!batch_ok) {
        throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + (transpose_a ? "^T" : "") + " x " +
                         shape_str(b.shape()) + (transpose_b ? "^T" : ""));
    }
    Shape out_shape(a.shape().begin(), a.shape().end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(p);
    Tensor out(out_shape);

    const std::size_t batches = a.size() / (m * ka);
    const std::size_t a_stride = m * ka;
    const std::size_t b_stride = shared_b ? 0 : kb * p;
    std::vector<double> scratch;
    for (std::size_t bi = 0; bi < batches; ++bi) {
        const double* ap = a.ptr() + bi * a_stride;
        const double* bp = b.ptr() + bi * b_stride;
        double* cp = out.ptr() + bi * m * p;
        if (transpose_a && transpose_b) {
            scratch.resize(ka * m);
            transpose_into(ap, scratch.data(), ka, m);
            gemm_nt(scratch.data(), bp, cp, m, ka, p);
        } else if (transpose_a) {
            gemm_tn(ap, bp, cp, m, ka, p);
        } else if (transpose_b) {
            gemm_nt(ap, bp, cp, m, ka, p);
        } else {
            gemm_nn(ap, bp, cp, m, ka, p);
        }
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    for (double& v : out.data()) v *= s;
    return out;
}

void axpy(Tensor& a, double s, const Tensor& b) {
    require_same_shape(a, b, "axpy");
    double* ap = a.ptr();
    const double* bp = b.ptr();
    for (std::size_t i = 0; i < a.size(); ++i) ap[i] += s * bp[i];
}

Tensor reduce_sum(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) {
        throw InvalidArgument("reduce: invalid axis " + std::to_string(axis) + " for shape " + shape_str(x.shape()));
    }
    const ChannelLayout l = channel_layout(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out_shape.empty()) out_shape.push_back(1);
    Tensor out(out_shape);
    for (std::size_t o = 0; o < l.outer; ++o)
        for (std::size_t c = 0; c < l.channels; ++c) {
            const double* src = x.ptr() + (o * l.channels + c) * l.inner;
            double* dst = out.ptr() + o * l.inner;
            for (std::size_t i = 0; i < l.inner; ++i) dst[i] += src[i];
        }
    return out;
}

Tensor reduce_mean(const Tensor& x, std::size_t axis) {
    Tensor out = reduce_sum(x, axis);
    const double n = static_cast<double>(x.dim(axis));
    for (double& v : out.data()) v /= n;
    return out;
}

double sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return s;
}

double dot(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) {
        throw ShapeError("dot: size mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(const Tensor& x) { return std::sqrt(dot(x, x)); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

Tensor permute(const Tensor& x, std::span<const std::size_t> order) {
    const std::size_t r = x.rank();
    if (order.size() != r) {
        throw InvalidArgument("permute: order of length " + std::to_string(order.size()) + " for shape " +
                              shape_str(x.shape()));
    }
    std::vector<bool> seen(r, false);
    for (std::size_t o : order) {
        if (o >= r || seen[o]) throw InvalidArgument("permute: invalid axis order for shape " + shape_str(x.shape()));
        seen[o] = true;
    }
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(order[i]);

    // Stride of each output axis within the input buffer.
    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
    std::vector<std::size_t> strides(r);
    for (std::size_t i = 0; i < r; ++i) strides[i] = in_strides[order[i]];

    Tensor out(out_shape);
    if (out.empty()) return out;
    std::vector<std::size_t> idx(r, 0);
    const std::size_t last = r - 1;
    const std::size_t inner = out_shape[last];
    const std::size_t inner_stride = strides[last];
    double* dst = out.ptr();
    std::size_t src_base = 0;
    for (std::size_t n = 0; n < out.size(); n += inner) {
        const double* src = x.ptr() + src_base;
        for (std::size_t i = 0; i < inner; ++i) dst[n + i] = src[i * inner_stride];
        // Advance the multi-index over all but the last axis.
        for (std::size_t ax = last; ax-- > 0;) {
            ++idx[ax];
            src_base += strides[ax];
            if (idx[ax] < out_shape[ax]) break;
            src_base -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    return out;
}

Tensor permute(const Tensor& x, std::initializer_list<std::size_t> order) {
    return permute(x, std::span<const std::size_t>(order.begin(), order.size()));
}

std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> order) {
    std::vector<std::size_t> inv(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) inv[order[i]] = i;
    return inv;
}

BatchNormState::BatchNormState(std::size_t channels)
    : running_mean(Shape{channels}, 0.0), running_var(Shape{channels}, 1.0) {}

ChannelLayout channel_layout(const Shape& shape, std::size_t channel_axis) {
    if (channel_axis >= shape.size()) {
        throw InvalidArgument("invalid axis " + std::to_string(channel_axis) + " for shape " + shape_str(shape));
    }
    ChannelLayout l;
    for (std::size_t i = 0; i < channel_axis; ++i) l.outer *= shape[i];
    l.channels = shape[channel_axis];
    for (std::size_t i = channel_axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
    return l;
}

BatchNormOutput batch_norm_full(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                                Mode mode, std::size_t channel_axis) {
    const ChannelLayout l = channel_layout(x.shape(), channel_axis);
    const std::size_t c = l.channels;
    if (gamma.size() != c || beta.size() != c || state.running_mean.size() != c || state.running_var.size() != c) {
        throw ShapeError("batch_norm: " + std::to_string(c) + " channels in " + shape_str(x.shape()) +
                         " but parameters have " + std::to_string(gamma.size()));
    }
    const std::size_t count = l.outer * l.inner;
    std::vector<double> mean(c, 0.0), var(c, 0.0);
    if (mode == Mode::train) {
        for (std::size_t o = 0; o < l.outer; ++o)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double* src = x.ptr() + (o * c + ch) * l.inner;
                double s = 0.0;
                for (std::size_t i = 0; i < l.inner; ++i) s += src[i];
                mean[ch] += s;
            }
        for (double& m : mean) m /= static_cast<double>(count);
        for (std::size_t o = 0; o < l.outer; ++o)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double* src = x.ptr() + (o * c + ch) * l.inner;
                double s = 0.0;
                for (std::size_t i = 0; i < l.inner; ++i) {
                    const double d = src[i] - mean[ch];
                    s += d * d;
                }
                var[ch] += s;
            }
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double biased = var[ch] / static_cast<double>(count);
            const double unbiased = count > 1 ? var[ch] / static_cast<double>(count - 1) : biased;
            var[ch] = biased;
            state.running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * mean[ch];
            state.running_var[ch] = (1.0 - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
        }
    } else {
        for (std::size_t ch = 0; ch < c; ++ch) {
            mean[ch] = state.running_mean[ch];
            var[ch] = state.running_var[ch];
        }
    }

    BatchNormOutput out{Tensor(x.shape()), Tensor(x.shape()), std::vector<double>(c)};
    for (std::size_t ch = 0; ch < c; ++ch) out.inv_std[ch] = 1.0 / std::sqrt(var[ch] + state.eps);
    for (std::size_t o = 0; o < l.outer; ++o)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (o * c + ch) * l.inner;
            const double m = mean[ch], is = out.inv_std[ch], g = gamma[ch], b = beta[ch];
            for (std::size_t i = 0; i < l.inner; ++i) {
                const double xh = (x[base + i] - m) * is;
                out.x_hat[base + i] = xh;
                out.y[base + i] = g * xh + b;
            }
        }
    return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode,
                  std::size_t channel_axis) {
    return batch_norm_full(x, gamma, beta, state, mode, channel_axis).y;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode) {
    if (x.rank() == 0) throw ShapeError("batch_norm: empty shape");
    return batch_norm(x, gamma, beta, state, mode, x.rank() - 1);
}

}  // namespace spikemix
