#include "spikemix/neuron.hpp"

#include <cmath>
#include <numbers>

#include "spikemix/error.hpp"

namespace spikemix {

double surrogate_grad(double v, const SurrogateSpec& spec) {
    switch (spec.kind) {
        case SurrogateKind::rectangular:
            return std::abs(v) < spec.width / 2.0 ? 1.0 / spec.width : 0.0;
        case SurrogateKind::arctan: {
            const double z = std::numbers::pi * spec.alpha * v / 2.0;
            return (spec.alpha / 2.0) / (1.0 + z * z);
        }
    }
    return 0.0;
}

Tensor surrogate_grad(const Tensor& v, const SurrogateSpec& spec) {
    Tensor out(v.shape());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = surrogate_grad(v[i], spec);
    return out;
}

void LifParams::validate() const {
    if (!(tau >= 1.0)) throw InvalidArgument("LIF tau must be >= 1, got " + std::to_string(tau));
    if (!(v_th > v_reset)) throw InvalidArgument("LIF v_th must exceed v_reset");
    if (surrogate.kind == SurrogateKind::rectangular && !(surrogate.width > 0.0))
        throw InvalidArgument("rectangular surrogate width must be positive");
    if (surrogate.kind == SurrogateKind::arctan && !(surrogate.alpha > 0.0))
        throw InvalidArgument("arctan surrogate alpha must be positive");
}

LifTrace lif_forward(const Tensor& x, const LifParams& p) {
    if (x.rank() == 0 || x.dim(0) == 0) throw ShapeError("lif: input needs a leading time axis");
    const std::size_t steps = x.dim(0);
    const std::size_t slice = x.size() / steps;
    const double inv_tau = 1.0 / p.tau;
    LifTrace tr{Tensor(x.shape()), Tensor(x.shape()), Tensor(Shape{slice}, p.v_reset)};
    double* v = tr.v_final.ptr();
    for (std::size_t t = 0; t < steps; ++t) {
        const double* xt = x.ptr() + t * slice;
        double* ht = tr.h.ptr() + t * slice;
        double* st = tr.spikes.ptr() + t * slice;
        for (std::size_t i = 0; i < slice; ++i) {
            const double h = v[i] + inv_tau * (xt[i] - (v[i] - p.v_reset));
            const double s = h - p.v_th >= 0.0 ? 1.0 : 0.0;
            ht[i] = h;
            st[i] = s;
            v[i] = s != 0.0 ? p.v_reset : h;
        }
    }
    return tr;
}

Tensor lif_sequence(const Tensor& x, const LifParams& params) { return lif_forward(x, params).spikes; }

Tensor lif_backward(const LifTrace& tr, const Tensor& gs, const LifParams& p) {
    const std::size_t steps = tr.h.dim(0);
    const std::size_t slice = tr.h.size() / steps;
    const double inv_tau = 1.0 / p.tau;
    const double leak = 1.0 - inv_tau;
    Tensor gx(tr.h.shape());
    // d(loss)/dV[t] carried backwards from step t+1.
    std::vector<double> gv(slice, 0.0);
    for (std::size_t t = steps; t-- > 0;) {
        const double* ht = tr.h.ptr() + t * slice;
        const double* st = tr.spikes.ptr() + t * slice;
        const double* gst = gs.ptr() + t * slice;
        double* gxt = gx.ptr() + t * slice;
        for (std::size_t i = 0; i < slice; ++i) {
            const double sg = surrogate_grad(ht[i] - p.v_th, p.surrogate);
            // dV/dH = (1 - S) + (v_reset - H) dS/dH
            const double dv_dh = (1.0 - st[i]) + (p.v_reset - ht[i]) * sg;
            const double gh = gst[i] * sg + gv[i] * dv_dh;
            gxt[i] = gh * inv_tau;
            gv[i] = gh * leak;
        }
    }
    return gx;
}

namespace ad {

Var lif(Var x, const LifParams& params) {
    LifTrace tr = lif_forward(x.value(), params);
    Tensor spikes = tr.spikes;
    const std::size_t ix = x.id();
    auto rule = [ix, params, tr = std::move(tr)](Tape& t, const Tensor& g) {
        t.accumulate(ix, lif_backward(tr, g, params));
    };
    return x.tape().record(std::move(spikes), {x}, std::move(rule), /*smooth=*/false);
}

}  // namespace ad

}  // namespace spikemix
