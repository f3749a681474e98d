#include "spikemix/layers.hpp"

#include <cmath>

#include "spikemix/error.hpp"

namespace spikemix {

Var spike(ForwardContext& ctx, Var x, std::string_view site) {
    const Shape shape = x.shape();
    const std::size_t t = ctx.timesteps;
    if (t == 0 || shape.empty() || shape[0] % t != 0) {
        throw ShapeError("spike layer '" + std::string(site) + "': leading axis of " + shape_str(shape) +
                         " is not a multiple of T=" + std::to_string(t));
    }
    Var s;
    if (shape[0] == t) {
        s = ad::lif(x, ctx.lif);
    } else {
        s = ad::reshape(ad::lif(ad::reshape(x, Shape{t, x.value().size() / t}), ctx.lif), shape);
    }
    if (ctx.observer && *ctx.observer) (*ctx.observer)(site, s.value());
    return s;
}

namespace {

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return rng.uniform_tensor(std::move(shape), -bound, bound);
}

struct ImageDims {
    std::size_t m, c, h, w;
};

ImageDims image_dims(const Tensor& x, const char* op) {
    if (x.rank() != 4) throw ShapeError(std::string(op) + ": expected [M, C, H, W], got " + shape_str(x.shape()));
    return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}

// cols[(c*9 + ky*3 + kx), y*W + x] = img[c, y+ky-1, x+kx-1]
void im2col(const double* img, std::size_t c, std::size_t h, std::size_t w, double* cols) {
    const std::size_t hw = h * w;
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t ky = 0; ky < 3; ++ky)
            for (std::size_t kx = 0; kx < 3; ++kx) {
                double* row = cols + ((ci * 3 + ky) * 3 + kx) * hw;
                for (std::size_t y = 0; y < h; ++y) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                    for (std::size_t xx = 0; xx < w; ++xx) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - 1;
                        const bool inside = sy >= 0 && sy < static_cast<std::ptrdiff_t>(h) && sx >= 0 &&
                                            sx < static_cast<std::ptrdiff_t>(w);
                        row[y * w + xx] = inside ? img[(ci * h + static_cast<std::size_t>(sy)) * w +
                                                       static_cast<std::size_t>(sx)]
                                                 : 0.0;
                    }
                }
            }
}

void col2im_add(const double* cols, std::size_t c, std::size_t h, std::size_t w, double* img) {
    const std::size_t hw = h * w;
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t ky = 0; ky < 3; ++ky)
            for (std::size_t kx = 0; kx < 3; ++kx) {
                const double* row = cols + ((ci * 3 + ky) * 3 + kx) * hw;
                for (std::size_t y = 0; y < h; ++y) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t xx = 0; xx < w; ++xx) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - 1;
                        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
                        img[(ci * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)] +=
                            row[y * w + xx];
                    }
                }
            }
}

void check_conv_weight(const ImageDims& d, const Tensor& w, std::size_t expected_in, const char* op) {
    if (w.rank() != 4 || w.dim(1) != expected_in || w.dim(2) != 3 || w.dim(3) != 3) {
        throw ShapeError(std::string(op) + ": weight " + shape_str(w.shape()) + " does not fit input with " +
                         std::to_string(d.c) + " channels");
    }
}

}  // namespace

Tensor conv2d_3x3(const Tensor& x, const Tensor& w) {
    const ImageDims d = image_dims(x, "conv2d");
    check_conv_weight(d, w, d.c, "conv2d");
    const std::size_t cout = w.dim(0);
    const std::size_t hw = d.h * d.w;
    const std::size_t k = d.c * 9;
    Tensor y(Shape{d.m, cout, d.h, d.w});
    std::vector<double> cols(k * hw);
    for (std::size_t mi = 0; mi < d.m; ++mi) {
        im2col(x.ptr() + mi * d.c * hw, d.c, d.h, d.w, cols.data());
        kernels::gemm_nn(w.ptr(), cols.data(), y.ptr() + mi * cout * hw, cout, k, hw);
    }
    return y;
}

Tensor depthwise_conv2d_3x3(const Tensor& x, const Tensor& w) {
    const ImageDims d = image_dims(x, "depthwise_conv2d");
    if (w.rank() != 4 || w.dim(0) != d.c || w.dim(1) != 1 || w.dim(2) != 3 || w.dim(3) != 3) {
        throw ShapeError("depthwise_conv2d: weight " + shape_str(w.shape()) + " for input " + shape_str(x.shape()));
    }
    Tensor y(x.shape());
    for (std::size_t mi = 0; mi < d.m; ++mi)
        for (std::size_t ci = 0; ci < d.c; ++ci) {
            const double* src = x.ptr() + (mi * d.c + ci) * d.h * d.w;
            double* dst = y.ptr() + (mi * d.c + ci) * d.h * d.w;
            const double* kern = w.ptr() + ci * 9;
            for (std::size_t yy = 0; yy < d.h; ++yy)
                for (std::size_t xx = 0; xx < d.w; ++xx) {
                    double acc = 0.0;
                    for (std::size_t ky = 0; ky < 3; ++ky) {
                        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(yy + ky) - 1;
                        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(d.h)) continue;
                        for (std::size_t kx = 0; kx < 3; ++kx) {
                            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - 1;
                            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(d.w)) continue;
                            acc += kern[ky * 3 + kx] *
                                   src[static_cast<std::size_t>(sy) * d.w + static_cast<std::size_t>(sx)];
                        }
                    }
                    dst[yy * d.w + xx] = acc;
                }
        }
    return y;
}

namespace {

Tensor max_pool_impl(const Tensor& x, std::vector<std::size_t>* argmax) {
    const ImageDims d = image_dims(x, "max_pool");
    if (d.h % 2 != 0 || d.w % 2 != 0) throw ShapeError("max_pool 2x2: odd spatial size in " + shape_str(x.shape()));
    const std::size_t oh = d.h / 2, ow = d.w / 2;
    Tensor y(Shape{d.m, d.c, oh, ow});
    if (argmax) argmax->resize(y.size());
    for (std::size_t plane = 0; plane < d.m * d.c; ++plane) {
        const double* src = x.ptr() + plane * d.h * d.w;
        for (std::size_t yy = 0; yy < oh; ++yy)
            for (std::size_t xx = 0; xx < ow; ++xx) {
                std::size_t best = (2 * yy) * d.w + 2 * xx;
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t idx = (2 * yy + dy) * d.w + 2 * xx + dx;
                        if (src[idx] > src[best]) best = idx;
                    }
                const std::size_t o = plane * oh * ow + yy * ow + xx;
                y[o] = src[best];
                if (argmax) (*argmax)[o] = plane * d.h * d.w + best;
            }
    }
    return y;
}

}  // namespace

Tensor max_pool_2x2(const Tensor& x) { return max_pool_impl(x, nullptr); }

namespace ad {

Var conv2d_3x3(Var x, Var w) {
    Tensor y = spikemix::conv2d_3x3(x.value(), w.value());
    const std::size_t ix = x.id(), iw = w.id();
    return x.tape().record(std::move(y), {x, w}, [ix, iw](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(ix);
        const Tensor& wv = t.value(iw);
        const std::size_t m = xv.dim(0), c = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
        const std::size_t cout = wv.dim(0), hw = h * wd, k = c * 9;
        const bool need_x = t.requires_grad(ix), need_w = t.requires_grad(iw);
        Tensor gx = need_x ? Tensor(xv.shape()) : Tensor();
        Tensor gw = need_w ? Tensor(wv.shape()) : Tensor();
        std::vector<double> cols(k * hw), gcols;
        for (std::size_t mi = 0; mi < m; ++mi) {
            const double* gm = g.ptr() + mi * cout * hw;
            if (need_w) {
                im2col(xv.ptr() + mi * c * hw, c, h, wd, cols.data());
                kernels::gemm_nt(gm, cols.data(), gw.ptr(), cout, hw, k);
            }
            if (need_x) {
                gcols.assign(k * hw, 0.0);
                kernels::gemm_tn(wv.ptr(), gm, gcols.data(), k, cout, hw);
                col2im_add(gcols.data(), c, h, wd, gx.ptr() + mi * c * hw);
            }
        }
        if (need_x) t.accumulate(ix, std::move(gx));
        if (need_w) t.accumulate(iw, std::move(gw));
    });
}

Var depthwise_conv2d_3x3(Var x, Var w) {
    Tensor y = spikemix::depthwise_conv2d_3x3(x.value(), w.value());
    const std::size_t ix = x.id(), iw = w.id();
    return x.tape().record(std::move(y), {x, w}, [ix, iw](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(ix);
        const Tensor& wv = t.value(iw);
        const std::size_t m = xv.dim(0), c = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
        Tensor gx(xv.shape());
        Tensor gw(wv.shape());
        for (std::size_t mi = 0; mi < m; ++mi)
            for (std::size_t ci = 0; ci < c; ++ci) {
                const std::size_t plane = (mi * c + ci) * h * wd;
                for (std::size_t yy = 0; yy < h; ++yy)
                    for (std::size_t xx = 0; xx < wd; ++xx) {
                        const double go = g[plane + yy * wd + xx];
                        for (std::size_t ky = 0; ky < 3; ++ky) {
                            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(yy + ky) - 1;
                            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                            for (std::size_t kx = 0; kx < 3; ++kx) {
                                const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - 1;
                                if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(wd)) continue;
                                const std::size_t src =
                                    plane + static_cast<std::size_t>(sy) * wd + static_cast<std::size_t>(sx);
                                gw[ci * 9 + ky * 3 + kx] += go * xv[src];
                                gx[src] += go * wv[ci * 9 + ky * 3 + kx];
                            }
                        }
                    }
            }
        t.accumulate(ix, std::move(gx));
        t.accumulate(iw, std::move(gw));
    });
}

Var max_pool_2x2(Var x) {
    std::vector<std::size_t> argmax;
    Tensor y = max_pool_impl(x.value(), &argmax);
    const std::size_t ix = x.id();
    const Shape in_shape = x.shape();
    return x.tape().record(std::move(y), {x}, [ix, in_shape, argmax = std::move(argmax)](Tape& t, const Tensor& g) {
        Tensor gx(in_shape);
        for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
        t.accumulate(ix, std::move(gx));
    });
}

}  // namespace ad

Linear::Linear(std::string name, std::size_t in, std::size_t out, bool with_bias, Rng& rng)
    : weight(name + ".weight", kaiming_uniform(Shape{in, out}, in, rng)) {
    if (with_bias) bias.emplace(name + ".bias", kaiming_uniform(Shape{out}, in, rng));
}

Var Linear::forward(Tape& tape, Var x) {
    Var y = ad::matmul(x, tape.param(weight));
    if (bias) y = ad::add_bias(y, tape.param(*bias));
    return y;
}

void Linear::collect(StateRefs& refs) {
    refs.params.push_back(&weight);
    if (bias) refs.params.push_back(&*bias);
}

BatchNorm::BatchNorm(std::string name_, std::size_t channels)
    : name(std::move(name_)),
      gamma(name + ".gamma", Tensor(Shape{channels}, 1.0)),
      beta(name + ".beta", Tensor(Shape{channels}, 0.0)),
      state(channels) {}

Var BatchNorm::forward(ForwardContext& ctx, Var x, std::size_t channel_axis) {
    return ad::batch_norm(x, ctx.tape.param(gamma), ctx.tape.param(beta), state, ctx.mode, channel_axis);
}

void BatchNorm::collect(StateRefs& refs) {
    refs.params.push_back(&gamma);
    refs.params.push_back(&beta);
    refs.buffers.emplace_back(name + ".running_mean", &state.running_mean);
    refs.buffers.emplace_back(name + ".running_var", &state.running_var);
}

Conv2d::Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels, Rng& rng)
    : weight(name + ".weight", kaiming_uniform(Shape{out_channels, in_channels, 3, 3}, in_channels * 9, rng)) {}

Var Conv2d::forward(Tape& tape, Var x) { return ad::conv2d_3x3(x, tape.param(weight)); }

void Conv2d::collect(StateRefs& refs) { refs.params.push_back(&weight); }

DepthwiseConv2d::DepthwiseConv2d(std::string name, std::size_t channels, Rng& rng)
    : weight(name + ".weight", kaiming_uniform(Shape{channels, 1, 3, 3}, 9, rng)) {}

Var DepthwiseConv2d::forward(Tape& tape, Var x) { return ad::depthwise_conv2d_3x3(x, tape.param(weight)); }

void DepthwiseConv2d::collect(StateRefs& refs) { refs.params.push_back(&weight); }

}  // namespace spikemix
