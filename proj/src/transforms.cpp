#include "spikemix/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "spikemix/error.hpp"

namespace spikemix {

namespace {

struct SliceDims {
    std::size_t batch = 1;
    std::size_t n = 1;
    std::size_t d = 1;
};

SliceDims slice_dims(const Shape& s) {
    if (s.empty()) throw ShapeError("transform input must have rank >= 1");
    if (s.size() == 1) return {1, s[0], 1};
    SliceDims dims;
    for (std::size_t i = 0; i + 2 < s.size(); ++i) dims.batch *= s[i];
    dims.n = s[s.size() - 2];
    dims.d = s.back();
    return dims;
}

// Strided addressing of every 1D signal along `axis` inside one slice.
struct Lines {
    std::size_t length;
    std::size_t stride;
    std::size_t count;
    std::size_t dist;
};

Lines lines_for(const SliceDims& dims, Axis axis) {
    if (axis == Axis::sequence) return {dims.n, dims.d, dims.d, 1};
    return {dims.d, 1, dims.n, dims.d};
}

const char* axis_name(Axis axis) { return axis == Axis::sequence ? "sequence" : "feature"; }

}  // namespace

ComplexTensor::ComplexTensor(Tensor re_, Tensor im_) : re(std::move(re_)), im(std::move(im_)) {
    if (re.shape() != im.shape()) {
        throw ShapeError("complex tensor parts differ: " + shape_str(re.shape()) + " vs " + shape_str(im.shape()));
    }
}

ComplexTensor::ComplexTensor(const Tensor& real) : re(real), im(real.shape()) {}

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

DftPlan::DftPlan(std::size_t n) : n_(n), fast_(is_power_of_two(n)) {
    if (n == 0) throw LengthError("DFT length must be positive");
    if (fast_) {
        std::size_t bits = 0;
        while ((std::size_t{1} << bits) < n) ++bits;
        bitrev_.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t r = 0;
            for (std::size_t b = 0; b < bits; ++b)
                if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
            bitrev_[i] = r;
        }
        cos_.resize(n / 2);
        sin_.resize(n / 2);
        for (std::size_t k = 0; k < n / 2; ++k) {
            const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
            cos_[k] = std::cos(angle);
            sin_[k] = -std::sin(angle);
        }
    } else {
        cos_.resize(n * n);
        sin_.resize(n * n);
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t j = 0; j < n; ++j) {
                const double angle = 2.0 * std::numbers::pi * static_cast<double>((k * j) % n) / static_cast<double>(n);
                cos_[k * n + j] = std::cos(angle);
                sin_[k * n + j] = std::sin(angle);
            }
    }
}

void DftPlan::transform(double* re, double* im, std::size_t stride, std::size_t count, std::size_t dist) const {
    if (!fast_) {
        naive(re, im, stride, count, dist);
    } else if (dist == 1 && count > 1) {
        fft_batched(re, im, stride, count);
    } else {
        for (std::size_t b = 0; b < count; ++b) fft_single(re + b * dist, im + b * dist, stride);
    }
}

// Signals are the columns of an [n, count] block with row stride `stride`;
// each butterfly updates a whole row at once.
void DftPlan::fft_batched(double* re, double* im, std::size_t stride, std::size_t count) const {
    const std::size_t n = n_;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = bitrev_[i];
        if (j > i) {
            std::swap_ranges(re + i * stride, re + i * stride + count, re + j * stride);
            std::swap_ranges(im + i * stride, im + i * stride + count, im + j * stride);
        }
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t half = len / 2;
        const std::size_t step = n / len;
        for (std::size_t start = 0; start < n; start += len) {
            for (std::size_t j = 0; j < half; ++j) {
                const double wr = cos_[j * step];
                const double wi = sin_[j * step];
                double* ar = re + (start + j) * stride;
                double* ai = im + (start + j) * stride;
                double* br = re + (start + j + half) * stride;
                double* bi = im + (start + j + half) * stride;
                for (std::size_t c = 0; c < count; ++c) {
                    const double vr = br[c] * wr - bi[c] * wi;
                    const double vi = br[c] * wi + bi[c] * wr;
                    const double ur = ar[c];
                    const double ui = ai[c];
                    ar[c] = ur + vr;
                    ai[c] = ui + vi;
                    br[c] = ur - vr;
                    bi[c] = ui - vi;
                }
            }
        }
    }
}

void DftPlan::fft_single(double* re, double* im, std::size_t stride) const {
    const std::size_t n = n_;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = bitrev_[i];
        if (j > i) {
            std::swap(re[i * stride], re[j * stride]);
            std::swap(im[i * stride], im[j * stride]);
        }
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t half = len / 2;
        const std::size_t step = n / len;
        for (std::size_t start = 0; start < n; start += len) {
            for (std::size_t j = 0; j < half; ++j) {
                const double wr = cos_[j * step];
                const double wi = sin_[j * step];
                const std::size_t a = (start + j) * stride;
                const std::size_t b = (start + j + half) * stride;
                const double vr = re[b] * wr - im[b] * wi;
                const double vi = re[b] * wi + im[b] * wr;
                const double ur = re[a];
                const double ui = im[a];
                re[a] = ur + vr;
                im[a] = ui + vi;
                re[b] = ur - vr;
                im[b] = ui - vi;
            }
        }
    }
}

void DftPlan::naive(double* re, double* im, std::size_t stride, std::size_t count, std::size_t dist) const {
    const std::size_t n = n_;
    std::vector<double> xr(n), xi(n);
    for (std::size_t b = 0; b < count; ++b) {
        double* r = re + b * dist;
        double* i = im + b * dist;
        for (std::size_t j = 0; j < n; ++j) {
            xr[j] = r[j * stride];
            xi[j] = i[j * stride];
        }
        for (std::size_t k = 0; k < n; ++k) {
            const double* c = cos_.data() + k * n;
            const double* s = sin_.data() + k * n;
            double accr = 0.0, acci = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                accr += xr[j] * c[j] + xi[j] * s[j];
                acci += xi[j] * c[j] - xr[j] * s[j];
            }
            r[k * stride] = accr;
            i[k * stride] = acci;
        }
    }
}

ComplexTensor dft_naive_1d(const ComplexTensor& x, Axis axis) {
    const SliceDims dims = slice_dims(x.shape());
    const Lines lines = lines_for(dims, axis);
    const std::size_t n = lines.length;
    ComplexTensor out(Tensor(x.shape()), Tensor(x.shape()));
    const std::size_t slice = dims.n * dims.d;
    for (std::size_t bt = 0; bt < dims.batch; ++bt)
        for (std::size_t c = 0; c < lines.count; ++c) {
            const std::size_t base = bt * slice + c * lines.dist;
            for (std::size_t f = 0; f < n; ++f) {
                double accr = 0.0, acci = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    const double angle =
                        -2.0 * std::numbers::pi * static_cast<double>((k * f) % n) / static_cast<double>(n);
                    const double cr = std::cos(angle), ci = std::sin(angle);
                    const double xr = x.re[base + k * lines.stride];
                    const double xi = x.im[base + k * lines.stride];
                    accr += xr * cr - xi * ci;
                    acci += xr * ci + xi * cr;
                }
                out.re[base + f * lines.stride] = accr;
                out.im[base + f * lines.stride] = acci;
            }
        }
    return out;
}

ComplexTensor dft_naive_1d(const Tensor& x, Axis axis) { return dft_naive_1d(ComplexTensor(x), axis); }

ComplexTensor fft_1d(const ComplexTensor& x, Axis axis) {
    const SliceDims dims = slice_dims(x.shape());
    const Lines lines = lines_for(dims, axis);
    if (!is_power_of_two(lines.length)) {
        throw LengthError("fft_1d: length " + std::to_string(lines.length) + " along the " + axis_name(axis) +
                          " axis is not a power of 2; use dft_naive_1d");
    }
    const DftPlan plan(lines.length);
    ComplexTensor out = x;
    const std::size_t slice = dims.n * dims.d;
    for (std::size_t bt = 0; bt < dims.batch; ++bt)
        plan.transform(out.re.ptr() + bt * slice, out.im.ptr() + bt * slice, lines.stride, lines.count, lines.dist);
    return out;
}

ComplexTensor fft_1d(const Tensor& x, Axis axis) { return fft_1d(ComplexTensor(x), axis); }

Tensor lt_fft_1d_real(const Tensor& x) {
    const SliceDims dims = slice_dims(x.shape());
    return TransformPlan(TransformKind::fft1d, dims.n, dims.d).apply(x);
}

Tensor lt_fft_2d_real(const Tensor& x) {
    const SliceDims dims = slice_dims(x.shape());
    return TransformPlan(TransformKind::fft2d, dims.n, dims.d).apply(x);
}

std::string_view to_string(WaveletFamily family) {
    switch (family) {
        case WaveletFamily::haar: return "haar";
        case WaveletFamily::db1: return "db1";
        case WaveletFamily::bior1_1: return "bior1.1";
        case WaveletFamily::rbio1_1: return "rbio1.1";
    }
    return "?";
}

WaveletFamily parse_wavelet(std::string_view name) {
    for (WaveletFamily f : all_wavelet_families())
        if (to_string(f) == name) return f;
    throw InvalidArgument("unknown wavelet family '" + std::string(name) + "' (expected haar|db1|bior1.1|rbio1.1)");
}

const std::vector<WaveletFamily>& all_wavelet_families() {
    static const std::vector<WaveletFamily> families{WaveletFamily::haar, WaveletFamily::db1, WaveletFamily::bior1_1,
                                                     WaveletFamily::rbio1_1};
    return families;
}

const WaveletFilter& wavelet_filter(WaveletFamily family) {
    // At length 2 all four families share the same taps; they stay separate
    // named filter sets so the bank machinery does not assume it.
    static const std::vector<WaveletFilter> filters = [] {
        const double s = 1.0 / std::numbers::sqrt2;
        std::vector<WaveletFilter> fs;
        auto make = [&](WaveletFamily fam, bool orthogonal) {
            WaveletFilter f;
            f.family = fam;
            f.name = std::string(to_string(fam));
            f.dec_lo = {s, s};
            f.dec_hi = {s, -s};
            f.rec_lo = {s, s};
            f.rec_hi = {s, -s};
            f.orthogonal = orthogonal;
            return f;
        };
        fs.push_back(make(WaveletFamily::haar, true));
        fs.push_back(make(WaveletFamily::db1, true));
        fs.push_back(make(WaveletFamily::bior1_1, false));
        fs.push_back(make(WaveletFamily::rbio1_1, false));
        return fs;
    }();
    return filters.at(static_cast<std::size_t>(family));
}

std::size_t max_dwt_levels(std::size_t n) {
    std::size_t levels = 0;
    while (n >= 2 && n % 2 == 0) {
        n /= 2;
        ++levels;
    }
    return levels;
}

std::size_t default_dwt_levels(std::size_t n) { return std::min<std::size_t>(3, max_dwt_levels(n)); }

namespace {

// One analysis step on the leading `len` entries of every line.
void analysis_step(double* data, const Lines& ln, std::size_t len, const WaveletFilter& f, std::vector<double>& tmp) {
    const std::size_t half = len / 2;
    const std::size_t count = ln.count;
    tmp.assign(len * count, 0.0);
    for (std::size_t k = 0; k < half; ++k) {
        double* lo = tmp.data() + k * count;
        double* hi = tmp.data() + (half + k) * count;
        for (std::size_t m = 0; m < f.dec_lo.size(); ++m) {
            const double* src = data + ((2 * k + m) % len) * ln.stride;
            const double cl = f.dec_lo[m], ch = f.dec_hi[m];
            for (std::size_t b = 0; b < count; ++b) {
                const double v = src[b * ln.dist];
                lo[b] += cl * v;
                hi[b] += ch * v;
            }
        }
    }
    for (std::size_t i = 0; i < len; ++i)
        for (std::size_t b = 0; b < count; ++b) data[i * ln.stride + b * ln.dist] = tmp[i * count + b];
}

// Transpose-form synthesis step with the given filter pair.
void synthesis_step(double* data, const Lines& ln, std::size_t len, const std::vector<double>& lo_taps,
                    const std::vector<double>& hi_taps, std::vector<double>& tmp) {
    const std::size_t half = len / 2;
    const std::size_t count = ln.count;
    tmp.assign(len * count, 0.0);
    for (std::size_t k = 0; k < half; ++k) {
        const double* a = data + k * ln.stride;
        const double* d = data + (half + k) * ln.stride;
        for (std::size_t m = 0; m < lo_taps.size(); ++m) {
            double* dst = tmp.data() + ((2 * k + m) % len) * count;
            const double cl = lo_taps[m], ch = hi_taps[m];
            for (std::size_t b = 0; b < count; ++b) dst[b] += cl * a[b * ln.dist] + ch * d[b * ln.dist];
        }
    }
    for (std::size_t i = 0; i < len; ++i)
        for (std::size_t b = 0; b < count; ++b) data[i * ln.stride + b * ln.dist] = tmp[i * count + b];
}

void check_levels(std::size_t n, std::size_t levels, Axis axis) {
    if (levels == 0) throw InvalidArgument("wavelet transform needs at least one level");
    std::size_t len = n;
    for (std::size_t level = 1; level <= levels; ++level) {
        if (len < 2 || len % 2 != 0) {
            throw LengthError("wavelet transform: odd length " + std::to_string(len) + " along the " +
                              axis_name(axis) + " axis at level " + std::to_string(level));
        }
        len /= 2;
    }
}

enum class Synthesis { inverse, transpose };

Tensor dwt_run(const Tensor& x, const WaveletFilter& f, std::size_t levels, Axis axis, bool analysis,
               Synthesis synth = Synthesis::inverse) {
    const SliceDims dims = slice_dims(x.shape());
    const Lines ln = lines_for(dims, axis);
    check_levels(ln.length, levels, axis);
    Tensor out = x;
    std::vector<double> tmp;
    const std::size_t slice = dims.n * dims.d;
    const auto& lo = synth == Synthesis::inverse ? f.rec_lo : f.dec_lo;
    const auto& hi = synth == Synthesis::inverse ? f.rec_hi : f.dec_hi;
    for (std::size_t bt = 0; bt < dims.batch; ++bt) {
        double* data = out.ptr() + bt * slice;
        if (analysis) {
            for (std::size_t level = 0; level < levels; ++level) analysis_step(data, ln, ln.length >> level, f, tmp);
        } else {
            for (std::size_t level = levels; level-- > 0;) synthesis_step(data, ln, ln.length >> level, lo, hi, tmp);
        }
    }
    return out;
}

}  // namespace

Tensor dwt_1d(const Tensor& x, const WaveletFilter& filter, std::size_t levels, Axis axis) {
    return dwt_run(x, filter, levels, axis, true);
}

Tensor idwt_1d(const Tensor& coeffs, const WaveletFilter& filter, std::size_t levels, Axis axis) {
    return dwt_run(coeffs, filter, levels, axis, false, Synthesis::inverse);
}

Tensor dwt_1d_transpose(const Tensor& coeffs, const WaveletFilter& filter, std::size_t levels, Axis axis) {
    return dwt_run(coeffs, filter, levels, axis, false, Synthesis::transpose);
}

Tensor lt_wt_2d(const Tensor& x, const WaveletFilter& filter, std::size_t levels_seq, std::size_t levels_feat) {
    return dwt_1d(dwt_1d(x, filter, levels_feat, Axis::feature), filter, levels_seq, Axis::sequence);
}

std::string_view to_string(TransformKind kind) {
    switch (kind) {
        case TransformKind::none: return "none";
        case TransformKind::fft1d: return "fft1d";
        case TransformKind::fft2d: return "fft2d";
        case TransformKind::wt1d: return "wt1d";
        case TransformKind::wt2d: return "wt2d";
        case TransformKind::wt2d_combination: return "wt2d-combination";
    }
    return "?";
}

TransformPlan::TransformPlan(TransformKind kind, std::size_t n, std::size_t d, std::vector<WaveletFamily> families,
                             std::size_t levels_seq, std::size_t levels_feat)
    : kind_(kind), n_(n), d_(d), families_(std::move(families)) {
    if (n == 0 || d == 0) throw LengthError("transform plan needs positive N and D");
    switch (kind) {
        case TransformKind::none:
            throw InvalidArgument("transform plan needs a kind");
        case TransformKind::fft1d:
            if (!is_power_of_two(n)) {
                throw LengthError("fft1d mixer: sequence length " + std::to_string(n) +
                                  " is not a power of 2; use dft_naive_1d");
            }
            seq_plan_ = DftPlan(n);
            break;
        case TransformKind::fft2d:
            seq_plan_ = DftPlan(n);
            feat_plan_ = DftPlan(d);
            break;
        case TransformKind::wt1d:
        case TransformKind::wt2d:
        case TransformKind::wt2d_combination: {
            if (families_.empty()) throw InvalidArgument("wavelet plan needs at least one family");
            if (kind != TransformKind::wt2d_combination && families_.size() != 1)
                throw InvalidArgument("wt1d/wt2d plans take exactly one wavelet family");
            levels_seq_ = levels_seq ? levels_seq : default_dwt_levels(n);
            check_levels(n, levels_seq_, Axis::sequence);
            if (kind != TransformKind::wt1d) {
                levels_feat_ = levels_feat ? levels_feat : default_dwt_levels(d);
                check_levels(d, levels_feat_, Axis::feature);
            }
            break;
        }
    }
}

void TransformPlan::check_input(const Tensor& x) const {
    if (kind_ == TransformKind::none) throw InvalidArgument("unknown transform plan");
    const SliceDims dims = slice_dims(x.shape());
    if (dims.n != n_ || dims.d != d_) {
        throw ShapeError(std::string(to_string(kind_)) + " plan for [" + std::to_string(n_) + "," +
                         std::to_string(d_) + "] applied to " + shape_str(x.shape()));
    }
}

Tensor TransformPlan::fft_real(const Tensor& x, bool both_axes) const {
    const SliceDims dims = slice_dims(x.shape());
    Tensor re = x;
    Tensor im(x.shape());
    const std::size_t slice = dims.n * dims.d;
    for (std::size_t bt = 0; bt < dims.batch; ++bt) {
        double* r = re.ptr() + bt * slice;
        double* i = im.ptr() + bt * slice;
        if (both_axes) feat_plan_.transform(r, i, 1, dims.n, dims.d);
        seq_plan_.transform(r, i, dims.d, dims.d, 1);
    }
    return re;
}

Tensor TransformPlan::wt_forward(const Tensor& x, const WaveletFilter& f) const {
    if (kind_ == TransformKind::wt1d) return dwt_1d(x, f, levels_seq_, Axis::sequence);
    return lt_wt_2d(x, f, levels_seq_, levels_feat_);
}

Tensor TransformPlan::wt_transpose(const Tensor& g, const WaveletFilter& f) const {
    if (kind_ == TransformKind::wt1d) return dwt_1d_transpose(g, f, levels_seq_, Axis::sequence);
    // (W_seq W_feat)^T = W_feat^T W_seq^T
    return dwt_1d_transpose(dwt_1d_transpose(g, f, levels_seq_, Axis::sequence), f, levels_feat_, Axis::feature);
}

Tensor TransformPlan::apply(const Tensor& x) const {
    check_input(x);
    switch (kind_) {
        case TransformKind::fft1d: return fft_real(x, false);
        case TransformKind::fft2d: return fft_real(x, true);
        case TransformKind::wt1d:
        case TransformKind::wt2d: return wt_forward(x, wavelet_filter(families_.front()));
        case TransformKind::wt2d_combination: {
            Tensor acc(x.shape());
            for (WaveletFamily fam : families_) axpy(acc, 1.0, wt_forward(x, wavelet_filter(fam)));
            return scale(acc, 1.0 / static_cast<double>(families_.size()));
        }
        case TransformKind::none: break;
    }
    throw InvalidArgument("unknown transform plan");
}

Tensor TransformPlan::adjoint(const Tensor& g) const {
    check_input(g);
    switch (kind_) {
        // Both cosine maps are symmetric matrices.
        case TransformKind::fft1d: return fft_real(g, false);
        case TransformKind::fft2d: return fft_real(g, true);
        case TransformKind::wt1d:
        case TransformKind::wt2d: return wt_transpose(g, wavelet_filter(families_.front()));
        case TransformKind::wt2d_combination: {
            Tensor acc(g.shape());
            for (WaveletFamily fam : families_) axpy(acc, 1.0, wt_transpose(g, wavelet_filter(fam)));
            return scale(acc, 1.0 / static_cast<double>(families_.size()));
        }
        case TransformKind::none: break;
    }
    throw InvalidArgument("unknown transform plan");
}

Tensor adjoint(const TransformPlan& plan, const Tensor& g) { return plan.adjoint(g); }

}  // namespace spikemix
