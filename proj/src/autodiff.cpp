#include "spikemix/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "spikemix/error.hpp"

namespace spikemix {

Parameter::Parameter(std::string name_, Tensor value_, bool trainable_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.shape()), trainable(trainable_) {}

void Parameter::zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor(value.shape());
    grad.fill(0.0);
}

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
    Node n;
    n.value = p.value;
    n.requires_grad = record_grad_ && p.trainable;
    n.param = n.requires_grad ? &p : nullptr;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward, bool smooth) {
    if (!smooth) nonsmooth_ = true;
    Node n;
    n.value = std::move(value);
    if (record_grad_) {
        for (const Var& v : inputs) {
            if (&v.tape() != this) throw TapeError("op mixes values from different tapes");
            n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
        }
        if (n.requires_grad) n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, const Tensor& grad) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (grad.size() != n.value.size()) {
        throw ShapeError("gradient " + shape_str(grad.shape()) + " for value " + shape_str(n.value.shape()));
    }
    if (!n.has_grad) {
        n.grad = grad.reshaped(n.value.shape());
        n.has_grad = true;
    } else {
        double* g = n.grad.ptr();
        for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += grad[i];
    }
}

void Tape::accumulate(std::size_t id, Tensor&& grad) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (!n.has_grad && grad.size() == n.value.size()) {
        n.grad = std::move(grad).reshaped(n.value.shape());
        n.has_grad = true;
        return;
    }
    accumulate(id, static_cast<const Tensor&>(grad));
}

void Tape::backward(Var loss) {
    if (!record_grad_) throw TapeError("backward on a tape that does not record gradients");
    if (backward_done_) throw TapeError("backward called twice on the same tape; record a new forward pass");
    if (&loss.tape() != this) throw TapeError("loss belongs to a different tape");
    if (loss.value().size() != 1) throw TapeError("loss must be scalar, got " + shape_str(loss.shape()));
    backward_done_ = true;
    accumulate(loss.id(), Tensor(loss.shape(), 1.0));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.has_grad) continue;
        if (n.param) {
            Tensor& pg = n.param->grad;
            if (pg.shape() != n.param->value.shape()) pg = Tensor(n.param->value.shape());
            for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
        }
        if (n.backward) {
            // Copy out: the rule may append to or re-read other nodes.
            Backward rule = std::move(n.backward);
            rule(*this, n.grad);
        }
    }
}

const Tensor* Tape::grad(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.has_grad ? &n.grad : nullptr;
}

std::size_t Tape::value_bytes() const {
    std::size_t bytes = 0;
    for (const Node& n : nodes_) bytes += n.value.size() * sizeof(double);
    return bytes;
}

namespace ad {

Var matmul(Var a, Var b, bool ta, bool tb) {
    Tensor out = spikemix::matmul(a.value(), b.value(), ta, tb);
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b}, [ia, ib, ta, tb](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(ia);
        const Tensor& bv = t.value(ib);
        if (t.requires_grad(ia)) {
            // C = op(A) op(B): dA = g op(B)^T, transposed back when A was.
            Tensor ga = ta ? spikemix::matmul(bv, g, tb, true) : spikemix::matmul(g, bv, false, !tb);
            t.accumulate(ia, std::move(ga));
        }
        if (t.requires_grad(ib)) {
            Tensor gb = tb ? spikemix::matmul(g, av, true, ta) : spikemix::matmul(av, g, !ta, false);
            if (bv.rank() == 2 && gb.rank() > 2) {
                // Shared weight: sum the per-batch contributions.
                const std::size_t block = bv.size();
                Tensor folded(bv.shape());
                for (std::size_t i = 0; i < gb.size(); ++i) folded[i % block] += gb[i];
                gb = std::move(folded);
            }
            t.accumulate(ib, std::move(gb));
        }
    });
}

Var add(Var a, Var b) {
    Tensor out = spikemix::add(a.value(), b.value());
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, g);
    });
}

Var add_bias(Var x, Var bias) {
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    const std::size_t k = bv.size();
    if (xv.rank() == 0 || xv.shape().back() != k) {
        throw ShapeError("add_bias: bias " + shape_str(bv.shape()) + " for input " + shape_str(xv.shape()));
    }
    Tensor out = xv;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % k];
    const std::size_t ix = x.id(), ib = bias.id();
    return x.tape().record(std::move(out), {x, bias}, [ix, ib, k](Tape& t, const Tensor& g) {
        t.accumulate(ix, g);
        if (t.requires_grad(ib)) {
            Tensor gb(Shape{k});
            for (std::size_t i = 0; i < g.size(); ++i) gb[i % k] += g[i];
            t.accumulate(ib, std::move(gb));
        }
    });
}

Var mul(Var a, Var b) {
    Tensor out = spikemix::mul(a.value(), b.value());
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
        if (t.requires_grad(ia)) t.accumulate(ia, spikemix::mul(g, t.value(ib)));
        if (t.requires_grad(ib)) t.accumulate(ib, spikemix::mul(g, t.value(ia)));
    });
}

Var scale(Var a, double s) {
    const std::size_t ia = a.id();
    return a.tape().record(spikemix::scale(a.value(), s), {a},
                           [ia, s](Tape& t, const Tensor& g) { t.accumulate(ia, spikemix::scale(g, s)); });
}

Var square(Var a) {
    const std::size_t ia = a.id();
    return a.tape().record(spikemix::mul(a.value(), a.value()), {a}, [ia](Tape& t, const Tensor& g) {
        Tensor ga = spikemix::mul(g, t.value(ia));
        for (double& v : ga.data()) v *= 2.0;
        t.accumulate(ia, std::move(ga));
    });
}

Var sum(Var a) {
    const std::size_t ia = a.id();
    const Shape shape = a.shape();
    return a.tape().record(Tensor::scalar(spikemix::sum(a.value())), {a},
                           [ia, shape](Tape& t, const Tensor& g) { t.accumulate(ia, Tensor(shape, g[0])); });
}

Var mean(Var a) {
    const std::size_t ia = a.id();
    const Shape shape = a.shape();
    const double n = static_cast<double>(a.value().size());
    return a.tape().record(Tensor::scalar(spikemix::sum(a.value()) / n), {a},
                           [ia, shape, n](Tape& t, const Tensor& g) { t.accumulate(ia, Tensor(shape, g[0] / n)); });
}

Var mean_axis(Var a, std::size_t axis) {
    Tensor out = reduce_mean(a.value(), axis);
    const std::size_t ia = a.id();
    const Shape shape = a.shape();
    return a.tape().record(std::move(out), {a}, [ia, shape, axis](Tape& t, const Tensor& g) {
        const ChannelLayout l = channel_layout(shape, axis);
        const double inv = 1.0 / static_cast<double>(l.channels);
        Tensor ga(shape);
        for (std::size_t o = 0; o < l.outer; ++o)
            for (std::size_t c = 0; c < l.channels; ++c)
                for (std::size_t i = 0; i < l.inner; ++i)
                    ga[(o * l.channels + c) * l.inner + i] = g[o * l.inner + i] * inv;
        t.accumulate(ia, std::move(ga));
    });
}

Var permute(Var a, std::vector<std::size_t> order) {
    Tensor out = spikemix::permute(a.value(), order);
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, inv = inverse_permutation(order)](Tape& t, const Tensor& g) {
        t.accumulate(ia, spikemix::permute(g, inv));
    });
}

Var reshape(Var a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    const std::size_t ia = a.id();
    // accumulate() reshapes to the input's own shape.
    return a.tape().record(std::move(out), {a}, [ia](Tape& t, const Tensor& g) { t.accumulate(ia, g); });
}

Var batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, Mode mode, std::size_t channel_axis) {
    BatchNormOutput r = batch_norm_full(x.value(), gamma.value(), beta.value(), state, mode, channel_axis);
    const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
    const Shape shape = x.shape();
    auto rule = [ix, ig, ib, shape, channel_axis, mode, x_hat = std::move(r.x_hat),
                 inv_std = std::move(r.inv_std)](Tape& t, const Tensor& g) {
        const ChannelLayout l = channel_layout(shape, channel_axis);
        const std::size_t c = l.channels;
        std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
        for (std::size_t o = 0; o < l.outer; ++o)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const std::size_t base = (o * c + ch) * l.inner;
                for (std::size_t i = 0; i < l.inner; ++i) {
                    sum_g[ch] += g[base + i];
                    sum_gx[ch] += g[base + i] * x_hat[base + i];
                }
            }
        if (t.requires_grad(ig)) t.accumulate(ig, Tensor(Shape{c}, sum_gx));
        if (t.requires_grad(ib)) t.accumulate(ib, Tensor(Shape{c}, sum_g));
        if (!t.requires_grad(ix)) return;
        const Tensor& gv = t.value(ig);
        Tensor gx(shape);
        const double n = static_cast<double>(l.outer * l.inner);
        for (std::size_t o = 0; o < l.outer; ++o)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const std::size_t base = (o * c + ch) * l.inner;
                const double k = gv[ch] * inv_std[ch];
                if (mode == Mode::eval) {
                    for (std::size_t i = 0; i < l.inner; ++i) gx[base + i] = k * g[base + i];
                } else {
                    const double mg = sum_g[ch] / n, mgx = sum_gx[ch] / n;
                    for (std::size_t i = 0; i < l.inner; ++i)
                        gx[base + i] = k * (g[base + i] - mg - x_hat[base + i] * mgx);
                }
            }
        t.accumulate(ix, std::move(gx));
    };
    return x.tape().record(std::move(r.y), {x, gamma, beta}, std::move(rule));
}

}  // namespace ad

double finite_difference_check(const std::function<Var(Tape&)>& loss, std::span<Parameter* const> params,
                               const FiniteDifferenceOptions& options) {
    for (Parameter* p : params) p->zero_grad();
    {
        Tape tape;
        Var l = loss(tape);
        if (tape.has_nonsmooth()) {
            throw TapeError("finite_difference_check: function contains a Heaviside spike nonlinearity");
        }
        tape.backward(l);
    }
    auto evaluate = [&] {
        Tape tape(false);
        return loss(tape).value().item();
    };
    Rng rng(options.seed);
    const double h = options.step;
    double worst = 0.0;
    for (Parameter* p : params) {
        std::vector<std::size_t> coords;
        if (p->numel() <= options.coords_per_param) {
            for (std::size_t i = 0; i < p->numel(); ++i) coords.push_back(i);
        } else {
            for (std::size_t k = 0; k < options.coords_per_param; ++k) coords.push_back(rng.below(p->numel()));
        }
        for (std::size_t i : coords) {
            const double saved = p->value[i];
            p->value[i] = saved + h;
            const double up = evaluate();
            p->value[i] = saved - h;
            const double down = evaluate();
            p->value[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = p->grad[i];
            worst = std::max(worst, std::abs(analytic - numeric) / (std::abs(analytic) + 1e-8));
        }
    }
    return worst;
}

}  // namespace spikemix
