#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "spikemix/tensor.hpp"

namespace spikemix {

// Every transform treats the last two axes of its input as one [N, D] slice
// (sequence x feature); leading axes are independent batch entries. A rank-1
// input is a single sequence with D = 1.
enum class Axis { sequence, feature };

struct ComplexTensor {
    Tensor re;
    Tensor im;

    ComplexTensor() = default;
    ComplexTensor(Tensor re_, Tensor im_);
    explicit ComplexTensor(const Tensor& real);
    const Shape& shape() const { return re.shape(); }
};

bool is_power_of_two(std::size_t n);

// Discrete Fourier transform of one length, unnormalized, e^{-2 pi i k n / N}.
// Power-of-two lengths use radix-2 Cooley-Tukey with a precomputed twiddle
// table; other lengths fall back to a precomputed O(N^2) kernel. Immutable
// after construction.
class DftPlan {
public:
    explicit DftPlan(std::size_t n = 1);

    std::size_t size() const { return n_; }
    bool fast() const { return fast_; }

    // In place over `count` signals; element i of signal b lives at
    // b * dist + i * stride.
    void transform(double* re, double* im, std::size_t stride, std::size_t count, std::size_t dist) const;

private:
    void fft_batched(double* re, double* im, std::size_t stride, std::size_t count) const;
    void fft_single(double* re, double* im, std::size_t stride) const;
    void naive(double* re, double* im, std::size_t stride, std::size_t count, std::size_t dist) const;

    std::size_t n_ = 1;
    bool fast_ = true;
    std::vector<std::size_t> bitrev_;
    std::vector<double> cos_;  // fast: N/2 twiddles; naive: N x N kernel
    std::vector<double> sin_;
};

// O(N^2) reference evaluated directly from the definition.
ComplexTensor dft_naive_1d(const Tensor& x, Axis axis = Axis::sequence);
ComplexTensor dft_naive_1d(const ComplexTensor& x, Axis axis = Axis::sequence);

// Radix-2 fast path; throws LengthError for lengths that are not a power of 2.
ComplexTensor fft_1d(const Tensor& x, Axis axis = Axis::sequence);
ComplexTensor fft_1d(const ComplexTensor& x, Axis axis = Axis::sequence);

// Re(F_seq(x)); the realized matrix C[n,k] = cos(2 pi k n / N) is symmetric.
Tensor lt_fft_1d_real(const Tensor& x);
// Re(F_seq(F_feat(x))), real part taken once after both axes.
Tensor lt_fft_2d_real(const Tensor& x);

enum class WaveletFamily { haar, db1, bior1_1, rbio1_1 };

std::string_view to_string(WaveletFamily family);
WaveletFamily parse_wavelet(std::string_view name);
const std::vector<WaveletFamily>& all_wavelet_families();

// Two-channel filter bank, correlation convention with periodic extension:
//   approx[k] = sum_m dec_lo[m] x[(2k + m) mod n]
//   detail[k] = sum_m dec_hi[m] x[(2k + m) mod n]
struct WaveletFilter {
    WaveletFamily family = WaveletFamily::haar;
    std::string name;
    std::vector<double> dec_lo;
    std::vector<double> dec_hi;
    std::vector<double> rec_lo;
    std::vector<double> rec_hi;
    bool orthogonal = false;
};

const WaveletFilter& wavelet_filter(WaveletFamily family);

// Number of halvings with an even length at every level (384 -> 7).
std::size_t max_dwt_levels(std::size_t n);
// min(3, max_dwt_levels(n)), the default depth per axis.
std::size_t default_dwt_levels(std::size_t n);

// Multi-level analysis along `axis`; output layout along that axis is
// [approx_J | detail_J | detail_{J-1} | ... | detail_1].
Tensor dwt_1d(const Tensor& x, const WaveletFilter& filter, std::size_t levels, Axis axis = Axis::sequence);
// Synthesis with the reconstruction filters; inverse of dwt_1d.
Tensor idwt_1d(const Tensor& coeffs, const WaveletFilter& filter, std::size_t levels, Axis axis = Axis::sequence);
// Exact transpose of dwt_1d (synthesis with the analysis filters). Equals
// idwt_1d for orthonormal filter banks.
Tensor dwt_1d_transpose(const Tensor& coeffs, const WaveletFilter& filter, std::size_t levels,
                        Axis axis = Axis::sequence);

// W_seq(W_feat(x)): analysis along the feature axis, then the sequence axis.
Tensor lt_wt_2d(const Tensor& x, const WaveletFilter& filter, std::size_t levels_seq, std::size_t levels_feat);

enum class TransformKind { none, fft1d, fft2d, wt1d, wt2d, wt2d_combination };

std::string_view to_string(TransformKind kind);

// A fixed linear token-mixing map on [..., N, D] with its transpose.
class TransformPlan {
public:
    TransformPlan() = default;
    // `families` selects the wavelet(s): one entry for wt1d/wt2d, the mixed
    // families for wt2d_combination. Zero levels picks default_dwt_levels().
    TransformPlan(TransformKind kind, std::size_t n, std::size_t d,
                  std::vector<WaveletFamily> families = {WaveletFamily::haar}, std::size_t levels_seq = 0,
                  std::size_t levels_feat = 0);

    TransformKind kind() const { return kind_; }
    std::size_t n() const { return n_; }
    std::size_t d() const { return d_; }
    std::size_t levels_seq() const { return levels_seq_; }
    std::size_t levels_feat() const { return levels_feat_; }
    const std::vector<WaveletFamily>& families() const { return families_; }

    Tensor apply(const Tensor& x) const;
    Tensor adjoint(const Tensor& g) const;

private:
    void check_input(const Tensor& x) const;
    Tensor fft_real(const Tensor& x, bool both_axes) const;
    Tensor wt_forward(const Tensor& x, const WaveletFilter& f) const;
    Tensor wt_transpose(const Tensor& g, const WaveletFilter& f) const;

    TransformKind kind_ = TransformKind::none;
    std::size_t n_ = 0;
    std::size_t d_ = 0;
    std::vector<WaveletFamily> families_;
    std::size_t levels_seq_ = 0;
    std::size_t levels_feat_ = 0;
    DftPlan seq_plan_;
    DftPlan feat_plan_;
};

Tensor adjoint(const TransformPlan& plan, const Tensor& g);

}  // namespace spikemix
