#include <doctest.h>

#include "spikemix/error.hpp"
#include "spikemix/mixers.hpp"

using namespace spikemix;

namespace {

bool binary(const Tensor& t) {
    for (double v : t.data())
        if (v != 0.0 && v != 1.0) return false;
    return true;
}

}  // namespace

TEST_CASE("ssa product hand oracle, both orders") {
    const Tensor q(Shape{2, 2}, {1, 0, 1, 1});
    const Tensor k(Shape{2, 2}, {1, 1, 0, 1});
    const Tensor v(Shape{2, 2}, {0, 1, 1, 0});
    const Tensor want(Shape{2, 2}, {0, 1, 1, 2});
    CHECK(ssa_mix(q, k, v, 1.0, SsaOrder::qk_first) == want);
    CHECK(ssa_mix(q, k, v, 1.0, SsaOrder::kv_first) == want);
    CHECK(attention_map(q, k) == Tensor(Shape{2, 2}, {1, 0, 2, 1}));
    CHECK(sum(ssa_mix(q, k, Tensor(Shape{2, 2}), 0.125, SsaOrder::qk_first)) == 0.0);
}

TEST_CASE("ssa orders agree exactly on random binary heads") {
    Rng rng(21);
    for (int i = 0; i < 25; ++i) {
        const std::size_t n = 1 + rng.below(64), d = 1 + rng.below(64);
        const Tensor q = rng.bernoulli_tensor(Shape{2, 1, 2, n, d}, 0.5);
        const Tensor k = rng.bernoulli_tensor(Shape{2, 1, 2, n, d}, 0.5);
        const Tensor v = rng.bernoulli_tensor(Shape{2, 1, 2, n, d}, 0.5);
        CHECK(ssa_mix(q, k, v, 0.125, SsaOrder::qk_first) == ssa_mix(q, k, v, 0.125, SsaOrder::kv_first));
        const Tensor map = attention_map(q, k);
        for (double a : map.data()) CHECK(a >= 0.0);
    }
    // Long sequences cross the row-block boundary of the qk-first path.
    const Tensor q = rng.bernoulli_tensor(Shape{1, 1, 1, 200, 16}, 0.5);
    const Tensor k = rng.bernoulli_tensor(Shape{1, 1, 1, 200, 16}, 0.5);
    const Tensor v = rng.bernoulli_tensor(Shape{1, 1, 1, 200, 16}, 0.5);
    CHECK(ssa_mix(q, k, v, 0.125, SsaOrder::qk_first) == ssa_mix(q, k, v, 0.125, SsaOrder::kv_first));
}

TEST_CASE("ssa head mismatch is an error") {
    CHECK_THROWS_AS(ssa_mix(Tensor(Shape{3, 4}), Tensor(Shape{3, 5}), Tensor(Shape{3, 4}), 1.0, SsaOrder::qk_first),
                    ShapeError);
}

TEST_CASE("fused ssa backward matches both orders") {
    Rng rng(3);
    Parameter q("q", rng.normal_tensor(Shape{2, 1, 2, 70, 4}));
    Parameter k("k", rng.normal_tensor(Shape{2, 1, 2, 70, 4}));
    Parameter v("v", rng.normal_tensor(Shape{2, 1, 2, 70, 4}));
    const Tensor r = rng.normal_tensor(Shape{2, 1, 2, 70, 4});
    Tensor grads[2][3];
    int i = 0;
    for (SsaOrder order : {SsaOrder::qk_first, SsaOrder::kv_first}) {
        for (Parameter* p : {&q, &k, &v}) p->zero_grad();
        Tape t;
        t.backward(ad::sum(ad::mul(ad::ssa_mix(t.param(q), t.param(k), t.param(v), 0.125, order), t.constant(r))));
        grads[i][0] = q.grad;
        grads[i][1] = k.grad;
        grads[i][2] = v.grad;
        ++i;
    }
    for (int j = 0; j < 3; ++j) CHECK(max_abs_diff(grads[0][j], grads[1][j]) < 1e-9);
    std::vector<Parameter*> ps{&q, &k, &v};
    auto loss = [&](Tape& t) {
        return ad::sum(ad::mul(ad::ssa_mix(t.param(q), t.param(k), t.param(v), 0.125, SsaOrder::qk_first), t.constant(r)));
    };
    CHECK(finite_difference_check(loss, ps) < 1e-5);
}

TEST_CASE("heads split and merge") {
    Rng rng(1);
    const Tensor x = rng.normal_tensor(Shape{2, 3, 5, 8});
    const Tensor h = split_heads(x, 2);
    CHECK(h.shape() == Shape{2, 3, 2, 5, 4});
    CHECK(h.at({1, 2, 1, 3, 2}) == x.at({1, 2, 3, 6}));
    CHECK(merge_heads(h) == x);
    CHECK_THROWS_AS(split_heads(x, 3), ShapeError);
}

TEST_CASE("mixer spec parsing and defaults") {
    CHECK(parse_mixer("wt2d-combination") == MixerKind::wt2d_combination);
    CHECK(parse_mixer("fft1d") == MixerKind::fft1d);
    CHECK_THROWS_AS(parse_mixer("softmax"), InvalidArgument);
    CHECK(parse_ssa_order("kv-first") == SsaOrder::kv_first);
    MixerSpec s;
    CHECK(s.scale == 0.125);
    CHECK(s.resolved_heads(384) == 12);
    CHECK(s.resolved_heads(16) == 1);
    s.heads = 5;
    CHECK_THROWS_AS(s.validate(64), InvalidArgument);
    CHECK(all_mixer_kinds().size() == 6);
}

TEST_CASE("ssa sub-layer") {
    Rng rng(7);
    MixerSpec spec;
    SsaSublayer ssa("m", 256, spec, rng);
    const Tensor x = rng.normal_tensor(Shape{2, 1, 64, 256});
    const LifParams lif;

    SUBCASE("projections are binary with the input shape") {
        Tape t(false);
        ForwardContext ctx{t, Mode::train, lif, 2, nullptr};
        const QkvVars qkv = ssa.project_qkv(ctx, t.constant(x));
        for (const Var* v : {&qkv.q, &qkv.k, &qkv.v}) {
            CHECK(v->shape() == x.shape());
            CHECK(binary(v->value()));
        }
        CHECK(sum(qkv.q.value()) > 0.0);
    }
    SUBCASE("negative beta silences Q") {
        ssa.bn_q.beta.value.fill(-100.0);
        Tape t(false);
        ForwardContext ctx{t, Mode::train, lif, 2, nullptr};
        CHECK(sum(ssa.project_qkv(ctx, t.constant(Tensor(x.shape()))).q.value()) == 0.0);
    }
    SUBCASE("output is binary; unreachable thresholds give zero") {
        Tape t(false);
        ForwardContext ctx{t, Mode::train, lif, 2, nullptr};
        const Var y = ssa.forward(ctx, t.constant(x));
        CHECK(y.shape() == x.shape());
        CHECK(binary(y.value()));
        LifParams high = lif;
        high.v_th = 1e12;
        ForwardContext quiet{t, Mode::train, high, 2, nullptr};
        CHECK(sum(ssa.forward(quiet, t.constant(x)).value()) == 0.0);
    }
    SUBCASE("census: four dense D x D weights without bias") {
        StateRefs refs;
        ssa.collect(refs);
        std::size_t dense = 0, affine = 0;
        for (Parameter* p : refs.params) {
            const bool norm = p->name.ends_with(".gamma") || p->name.ends_with(".beta");
            (norm ? affine : dense) += p->numel();
        }
        CHECK(dense == 4 * 256 * 256);
        CHECK(affine == 4 * 2 * 256);
    }
}

TEST_CASE("lt sub-layers") {
    Rng rng(9);
    const LifParams lif;
    for (MixerKind kind : all_mixer_kinds()) {
        if (kind == MixerKind::ssa) continue;
        MixerSpec spec;
        spec.kind = kind;
        LtSublayer lt("m", 16, 32, spec);
        StateRefs refs;
        lt.collect(refs);
        for (Parameter* p : refs.params)
            CHECK((p->name.ends_with(".gamma") || p->name.ends_with(".beta")));

        Tape t(false);
        ForwardContext ctx{t, Mode::train, lif, 3, nullptr};
        CHECK(sum(lt.forward(ctx, t.constant(Tensor(Shape{3, 2, 16, 32}))).value()) == 0.0);
        const Tensor x = rng.normal_tensor(Shape{3, 2, 16, 32});
        const Var y = lt.forward(ctx, t.constant(x));
        CHECK(y.shape() == x.shape());
        CHECK(binary(y.value()));

        // Mixing acts per time step: permuting time permutes the pre-SN values.
        const Tensor swapped = permute(x.reshaped(Shape{3, 2 * 16 * 32}), {0, 1});
        Tensor rolled(x.shape());
        const std::size_t slice = 2 * 16 * 32;
        for (std::size_t tt = 0; tt < 3; ++tt)
            for (std::size_t i = 0; i < slice; ++i) rolled[((tt + 1) % 3) * slice + i] = swapped[tt * slice + i];
        const Tensor a = lt.mix(t.constant(x)).value();
        const Tensor b = lt.mix(t.constant(rolled)).value();
        for (std::size_t tt = 0; tt < 3; ++tt)
            for (std::size_t i = 0; i < slice; ++i) CHECK(b[((tt + 1) % 3) * slice + i] == a[tt * slice + i]);
    }
}

TEST_CASE("fft1d on constant rows concentrates at sequence index 0") {
    MixerSpec spec;
    spec.kind = MixerKind::fft1d;
    LtSublayer lt("m", 8, 4, spec);
    Tape t(false);
    Tensor x(Shape{1, 1, 8, 4});
    for (std::size_t n = 0; n < 8; ++n)
        for (std::size_t d = 0; d < 4; ++d) x.at({0, 0, n, d}) = static_cast<double>(d + 1);
    const Tensor y = lt.mix(t.constant(x)).value();
    for (std::size_t d = 0; d < 4; ++d) CHECK(y.at({0, 0, 0, d}) == doctest::Approx(8.0 * (d + 1)));
    for (std::size_t n = 1; n < 8; ++n)
        for (std::size_t d = 0; d < 4; ++d) CHECK(std::abs(y.at({0, 0, n, d})) < 1e-12);
}

TEST_CASE("every mixer kind is interchangeable") {
    Rng rng(4);
    const LifParams lif;
    const Tensor x = rng.normal_tensor(Shape{2, 2, 16, 32});
    for (MixerKind kind : all_mixer_kinds()) {
        MixerSpec spec;
        spec.kind = kind;
        auto m = make_mixer("layers.0.mixer", spec, 16, 32, rng);
        CHECK(m->kind() == kind);
        Tape t;
        ForwardContext ctx{t, Mode::train, lif, 2, nullptr};
        const Var y = m->forward(ctx, t.constant(x));
        CHECK(y.shape() == x.shape());
        CHECK(binary(y.value()));
    }
}
