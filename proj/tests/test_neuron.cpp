#include <doctest.h>

#include "spikemix/autodiff.hpp"
#include "spikemix/error.hpp"
#include "spikemix/neuron.hpp"
#include "spikemix/rng.hpp"

using namespace spikemix;

TEST_CASE("hand-evaluated recurrence") {
    const LifParams p;
    const LifTrace tr = lif_forward(Tensor(Shape{3, 1}, {0.5, 1.0, 3.0}), p);
    CHECK(tr.h == Tensor(Shape{3, 1}, {0.25, 0.625, 1.8125}));
    CHECK(tr.spikes == Tensor(Shape{3, 1}, {0, 0, 1}));
    CHECK(tr.v_final[0] == 0.0);
}

TEST_CASE("quiescent neuron") {
    const LifTrace tr = lif_forward(Tensor(Shape{4, 2, 3}), LifParams{});
    CHECK(sum(tr.spikes) == 0.0);
    CHECK(sum(tr.h) == 0.0);
    CHECK(sum(tr.v_final) == 0.0);
}

TEST_CASE("threshold equality fires") {
    const LifParams p;
    const LifTrace tr = lif_forward(Tensor(Shape{1, 1}, {p.tau * p.v_th}), p);
    CHECK(tr.h[0] == p.v_th);
    CHECK(tr.spikes[0] == 1.0);
}

TEST_CASE("surrogate values") {
    SurrogateSpec rect;
    CHECK(surrogate_grad(0.0, rect) == 1.0);
    CHECK(surrogate_grad(0.7, rect) == 0.0);
    CHECK(surrogate_grad(-0.4, rect) == 1.0);
    SurrogateSpec at{SurrogateKind::arctan, 1.0, 2.0};
    CHECK(surrogate_grad(0.0, at) == 1.0);
    CHECK(surrogate_grad(0.3, at) == surrogate_grad(-0.3, at));
    CHECK(surrogate_grad(0.3, at) < 1.0);
}

TEST_CASE("binarity, reset and monotonicity on random input") {
    Rng rng(4);
    const LifParams p;
    const Tensor x = rng.normal_tensor(Shape{6, 2, 5, 7}, 1.0, 1.5);
    const LifTrace tr = lif_forward(x, p);
    for (double s : tr.spikes.data()) CHECK((s == 0.0 || s == 1.0));
    // Recompute the stored potential and check the reset rule.
    const std::size_t slice = x.size() / 6;
    std::vector<double> v(slice, p.v_reset);
    for (std::size_t t = 0; t < 6; ++t)
        for (std::size_t i = 0; i < slice; ++i) {
            const double h = tr.h[t * slice + i];
            const double s = tr.spikes[t * slice + i];
            v[i] = s == 1.0 ? p.v_reset : h;
        }
    for (std::size_t i = 0; i < slice; ++i) CHECK(v[i] == tr.v_final[i]);

    // Raising X[t] of one element never removes its spike at t.
    for (std::size_t t = 0; t < 6; ++t) {
        Tensor y = x;
        y[t * slice + 3] += 0.9;
        const LifTrace t2 = lif_forward(y, p);
        if (tr.spikes[t * slice + 3] == 1.0) CHECK(t2.spikes[t * slice + 3] == 1.0);
    }
}

TEST_CASE("single-neuron backward equals the hand chain rule") {
    // T = 3, x = [0.5, 1.0, 3.0]; H = [0.25, 0.625, 1.8125], S = [0, 0, 1].
    const LifParams p;
    const double tau = p.tau;
    const Tensor x(Shape{3, 1}, {0.5, 1.0, 3.0});
    const Tensor gs(Shape{3, 1}, {0.3, -1.0, 2.0});
    const LifTrace tr = lif_forward(x, p);
    const Tensor gx = lif_backward(tr, gs, p);

    auto sg = [&](std::size_t t) { return surrogate_grad(tr.h[t] - p.v_th, p.surrogate); };
    // dV/dH = (1 - S) + (v_reset - H) sg; dH[t]/dV[t-1] = 1 - 1/tau; dH/dX = 1/tau.
    double gv = 0.0;
    double expected[3];
    for (int t = 2; t >= 0; --t) {
        const double s = tr.spikes[t];
        const double gh = gs[t] * sg(t) + gv * ((1.0 - s) + (p.v_reset - tr.h[t]) * sg(t));
        expected[t] = gh * (1.0 / tau);
        gv = gh * (1.0 - 1.0 / tau);
    }
    for (std::size_t t = 0; t < 3; ++t) CHECK(gx[t] == expected[t]);

    Parameter px("x", x);
    Tape tape;
    Var s = ad::lif(tape.param(px), p);
    tape.backward(ad::sum(ad::mul(s, tape.constant(gs))));
    CHECK(px.grad == gx);
}

TEST_CASE("parameter validation") {
    LifParams p;
    p.tau = 0.5;
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
    p = LifParams{};
    p.v_reset = 2.0;
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
}
