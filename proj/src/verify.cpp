#include "spikemix/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#include "spikemix/error.hpp"
#include "spikemix/mixers.hpp"
#include "spikemix/model.hpp"
#include "spikemix/train.hpp"

namespace spikemix {

std::size_t VerifyReport::passed() const {
    return static_cast<std::size_t>(std::count_if(checks.begin(), checks.end(), [](auto& c) { return c.passed; }));
}

std::size_t VerifyReport::failed() const { return checks.size() - passed(); }

const SuiteSummary* VerifyReport::suite(std::string_view name) const {
    for (const auto& s : suites)
        if (s.name == name) return &s;
    return nullptr;
}

const std::vector<std::string>& verify_suite_names() {
    static const std::vector<std::string> names{"dft", "wavelet", "ssa", "gradient", "census"};
    return names;
}

namespace {

class Checker {
public:
    Checker(std::string suite, VerifyReport& report, const std::function<void(const CheckResult&)>& sink)
        : suite_(std::move(suite)), report_(report), sink_(sink) {}

    void check(const std::string& name, bool ok, const std::string& detail = {}) {
        CheckResult r{suite_, name, ok, detail};
        if (sink_) sink_(r);
        report_.checks.push_back(std::move(r));
    }

    // Runs `body`; an exception counts as one failed check.
    template <typename F>
    void guarded(const std::string& name, F&& body) {
        try {
            body();
        } catch (const std::exception& e) {
            check(name, false, std::string("threw: ") + e.what());
        }
    }

private:
    std::string suite_;
    VerifyReport& report_;
    const std::function<void(const CheckResult&)>& sink_;
};

std::string sci(double v) {
    std::ostringstream s;
    s.precision(3);
    s << std::scientific << v;
    return s.str();
}

double max_abs(const Tensor& t) {
    double m = 0.0;
    for (double v : t.data()) m = std::max(m, std::abs(v));
    return m;
}

double rel_err(const Tensor& got, const Tensor& want) {
    return max_abs_diff(got, want) / std::max(1.0, max_abs(want));
}

// Re sum_n sum_m x[n, m] exp(-2 pi i (k n / N + l m / D)), straight from the
// definition.
Tensor naive_dft2_real(const Tensor& x) {
    const std::size_t n = x.dim(0), d = x.dim(1);
    Tensor out(x.shape());
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t l = 0; l < d; ++l) {
            double acc = 0.0;
            for (std::size_t a = 0; a < n; ++a)
                for (std::size_t b = 0; b < d; ++b) {
                    const double phase = 2.0 * std::numbers::pi *
                                         (static_cast<double>((k * a) % n) / static_cast<double>(n) +
                                          static_cast<double>((l * b) % d) / static_cast<double>(d));
                    acc += x[a * d + b] * std::cos(phase);
                }
            out[k * d + l] = acc;
        }
    return out;
}

void suite_dft(Checker& c) {
    Rng rng(101);
    for (std::size_t n = 2; n <= 1024; n *= 2) {
        c.guarded("fft_1d N=" + std::to_string(n), [&] {
            double worst = 0.0;
            for (int trial = 0; trial < 50; ++trial) {
                const Tensor x = rng.bernoulli_tensor(Shape{n}, 0.5);
                const ComplexTensor fast = fft_1d(x);
                const ComplexTensor ref = dft_naive_1d(x);
                const double scale = std::max({1.0, max_abs(ref.re), max_abs(ref.im)});
                worst = std::max({worst, max_abs_diff(fast.re, ref.re) / scale, max_abs_diff(fast.im, ref.im) / scale});
            }
            c.check("fft_1d N=" + std::to_string(n) + " vs naive DFT", worst < 1e-9, "max rel err " + sci(worst));
        });
    }
    for (auto [n, d] : {std::pair<std::size_t, std::size_t>{8, 8}, {16, 32}, {64, 16}, {16, 24}, {12, 8}}) {
        const std::string name = "lt_fft_2d_real [" + std::to_string(n) + "," + std::to_string(d) + "]";
        c.guarded(name, [&] {
            double worst = 0.0;
            for (int trial = 0; trial < 3; ++trial) {
                const Tensor x = rng.bernoulli_tensor(Shape{n, d}, 0.5);
                worst = std::max(worst, rel_err(lt_fft_2d_real(x), naive_dft2_real(x)));
            }
            c.check(name + " vs double-sum oracle", worst < 1e-9, "max rel err " + sci(worst));
        });
    }
    c.guarded("fft_1d rejects N=12", [&] {
        bool threw = false;
        try {
            fft_1d(Tensor(Shape{12}));
        } catch (const LengthError&) {
            threw = true;
        }
        c.check("fft_1d rejects non power of 2", threw);
    });
}

// Haar analysis matrix from box functions: rows are the scaling functions
// at level J, then wavelets from level J down to 1.
Tensor haar_matrix(std::size_t n, std::size_t levels) {
    Tensor m(Shape{n, n});
    std::size_t row = 0;
    const std::size_t block = std::size_t{1} << levels;
    const double amp_j = std::pow(2.0, -static_cast<double>(levels) / 2.0);
    for (std::size_t k = 0; k < n / block; ++k, ++row)
        for (std::size_t i = 0; i < block; ++i) m[row * n + k * block + i] = amp_j;
    for (std::size_t j = levels; j >= 1; --j) {
        const std::size_t b = std::size_t{1} << j;
        const double amp = std::pow(2.0, -static_cast<double>(j) / 2.0);
        for (std::size_t k = 0; k < n / b; ++k, ++row)
            for (std::size_t i = 0; i < b; ++i) m[row * n + k * b + i] = i < b / 2 ? amp : -amp;
    }
    return m;
}

void suite_wavelet(Checker& c) {
    Rng rng(202);
    for (WaveletFamily fam : all_wavelet_families()) {
        const WaveletFilter& f = wavelet_filter(fam);
        const std::string fname(to_string(fam));
        c.guarded(fname + " reconstruction", [&] {
            double worst_rec = 0.0, worst_parseval = 0.0;
            std::size_t cases = 0;
            for (std::size_t n = 4; n <= 256; n += 2) {
                for (std::size_t j = 1; j <= max_dwt_levels(n); ++j) {
                    const Tensor x = rng.normal_tensor(Shape{n});
                    const Tensor coeffs = dwt_1d(x, f, j);
                    worst_rec = std::max(worst_rec, rel_err(idwt_1d(coeffs, f, j), x));
                    worst_parseval = std::max(worst_parseval, std::abs(norm2(coeffs) - norm2(x)) / norm2(x));
                    ++cases;
                }
            }
            c.check(fname + " idwt(dwt(x)) = x, " + std::to_string(cases) + " (N, J) cases", worst_rec < 1e-9,
                    "max rel err " + sci(worst_rec));
            if (f.orthogonal) {
                c.check(fname + " Parseval", worst_parseval < 1e-9, "max rel err " + sci(worst_parseval));
            }
        });
        c.guarded(fname + " hand oracles", [&] {
            const Tensor ones(Shape{4}, 1.0);
            const Tensor e0(Shape{4}, std::vector<double>{1, 0, 0, 0});
            const Tensor want_ones(Shape{4}, std::vector<double>{2, 0, 0, 0});
            const Tensor want_e0(Shape{4}, std::vector<double>{0.5, 0.5, 1.0 / std::sqrt(2.0), 0});
            const double e1 = max_abs_diff(dwt_1d(ones, f, 2), want_ones);
            const double e2 = max_abs_diff(dwt_1d(e0, f, 2), want_e0);
            c.check(fname + " dwt([1,1,1,1], J=2) = [2,0,0,0]", e1 < 1e-12, "err " + sci(e1));
            c.check(fname + " dwt([1,0,0,0], J=2) = [0.5,0.5,1/sqrt2,0]", e2 < 1e-12, "err " + sci(e2));
        });
    }
    c.guarded("haar box-function matrix", [&] {
        double worst = 0.0;
        for (std::size_t n : {4, 8, 16, 64, 256}) {
            std::size_t levels = 0;
            while ((std::size_t{1} << (levels + 1)) <= n) ++levels;
            for (std::size_t j = 1; j <= levels; ++j) {
                const Tensor x = rng.normal_tensor(Shape{n, 1});
                const Tensor want = matmul(haar_matrix(n, j), x);
                worst = std::max(worst, rel_err(dwt_1d(x, wavelet_filter(WaveletFamily::haar), j), want));
            }
        }
        c.check("haar dwt matches dense box-function matrix", worst < 1e-12, "max rel err " + sci(worst));
    });
}

ModelConfig small_model(MixerKind kind) {
    ModelConfig m;
    m.layers = 2;
    m.dim = 32;
    m.timesteps = 4;
    m.channels = 1;
    m.height = m.width = 16;
    m.patch = 4;
    m.mixer.kind = kind;
    return m;
}

void suite_ssa(Checker& c) {
    Rng rng(303);
    c.guarded("ssa order equality", [&] {
        std::size_t equal = 0;
        bool nonneg = true;
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t n = 1 + rng.below(64), d = 1 + rng.below(64);
            const double p = 0.1 + 0.8 * rng.uniform();
            const Shape s{2, n, d};
            const Tensor q = rng.bernoulli_tensor(s, p), k = rng.bernoulli_tensor(s, p), v = rng.bernoulli_tensor(s, p);
            const double scale = trial % 2 ? 0.125 : 0.25 * rng.uniform() + 0.01;
            equal += ssa_mix(q, k, v, scale, SsaOrder::qk_first) == ssa_mix(q, k, v, scale, SsaOrder::kv_first);
            const Tensor map = attention_map(q, k);
            for (double a : map.data()) nonneg = nonneg && a >= 0.0;
        }
        c.check("qk-first == kv-first bit-exact on 100 binary instances", equal == 100,
                std::to_string(equal) + "/100 equal");
        c.check("every Q K^T entry >= 0", nonneg);
    });
    for (MixerKind kind : all_mixer_kinds()) {
        const std::string name = "spike binarity, " + std::string(to_string(kind)) + " model";
        c.guarded(name, [&] {
            Spikformer model(small_model(kind), 7);
            std::size_t sites = 0, bad = 0;
            SpikeObserver obs = [&](std::string_view, const Tensor& s) {
                ++sites;
                for (double v : s.data())
                    if (v != 0.0 && v != 1.0) ++bad;
            };
            const Tensor img = rng.uniform_tensor(Shape{4, 3, 1, 16, 16}, 0.0, 1.0);
            Tape tape;
            model.forward(tape, img, Mode::train, &obs);
            model.predict(img, &obs);
            c.check(name, bad == 0 && sites > 0,
                    std::to_string(sites) + " SN outputs, " + std::to_string(bad) + " non-binary entries");
        });
    }
}

std::vector<TransformPlan> all_lt_plans(std::size_t n, std::size_t d) {
    std::vector<TransformPlan> plans;
    for (MixerKind kind : all_mixer_kinds()) {
        if (kind == MixerKind::ssa) continue;
        MixerSpec spec;
        spec.kind = kind;
        if (kind == MixerKind::wt1d || kind == MixerKind::wt2d) {
            for (WaveletFamily f : all_wavelet_families()) {
                spec.wavelet = f;
                plans.push_back(make_transform_plan(spec, n, d));
            }
        } else {
            plans.push_back(make_transform_plan(spec, n, d));
        }
    }
    return plans;
}

std::string plan_name(const TransformPlan& p) {
    std::string s(to_string(p.kind()));
    if (p.kind() == TransformKind::wt1d || p.kind() == TransformKind::wt2d) s += "-" + std::string(to_string(p.families()[0]));
    return s + " [" + std::to_string(p.n()) + "," + std::to_string(p.d()) + "]";
}

// Scalar loss <f(params), R> with a fixed random R, so every coordinate of the
// gradient is O(1).
Var probe(Tape& tape, Var y, const Tensor& r) { return ad::sum(ad::mul(y, tape.constant(r))); }

void fd_check(Checker& c, const std::string& name, const std::function<Var(Tape&)>& loss,
              std::vector<Parameter*> params) {
    c.guarded("finite differences: " + name, [&] {
        const double err = finite_difference_check(loss, params, {.step = 1e-4, .coords_per_param = 16, .seed = 5});
        c.check("finite differences: " + name, err < 1e-5, "max rel err " + sci(err));
    });
}

void suite_gradient(Checker& c) {
    Rng rng(404);
    for (auto [n, d] : {std::pair<std::size_t, std::size_t>{16, 64}, {64, 384}}) {
        for (const TransformPlan& plan : all_lt_plans(n, d)) {
            const std::string name = "adjoint " + plan_name(plan);
            c.guarded(name, [&] {
                const Tensor x = rng.normal_tensor(Shape{2, 1, n, d});
                const Tensor y = rng.normal_tensor(Shape{2, 1, n, d});
                const double lhs = dot(plan.apply(x), y);
                const double rhs = dot(x, plan.adjoint(y));
                const double bound = 1e-9 * norm2(x) * norm2(y);
                c.check(name, std::abs(lhs - rhs) < bound,
                        "|<Lx,y> - <x,L^T y>| = " + sci(std::abs(lhs - rhs)) + ", bound " + sci(bound));
            });
        }
    }

    {
        Linear lin("fd.lin", 12, 7, true, rng);
        Parameter x("fd.x", rng.normal_tensor(Shape{2, 5, 12}));
        const Tensor r = rng.normal_tensor(Shape{2, 5, 7});
        fd_check(c, "linear", [&](Tape& t) { return probe(t, lin.forward(t, t.param(x)), r); },
                 {&lin.weight, &*lin.bias, &x});
    }
    for (Mode mode : {Mode::eval, Mode::train}) {
        BatchNorm bn("fd.bn", 6);
        bn.gamma.value = rng.uniform_tensor(Shape{6}, 0.5, 1.5);
        bn.beta.value = rng.normal_tensor(Shape{6});
        bn.state.running_mean = rng.normal_tensor(Shape{6});
        bn.state.running_var = rng.uniform_tensor(Shape{6}, 0.5, 2.0);
        Parameter x("fd.x", rng.normal_tensor(Shape{3, 4, 6}));
        const Tensor r = rng.normal_tensor(Shape{3, 4, 6});
        const LifParams lif;
        fd_check(c, mode == Mode::eval ? "batch norm (eval)" : "batch norm (train)",
                 [&](Tape& t) {
                     ForwardContext ctx{t, mode, lif, 3, nullptr};
                     return probe(t, bn.forward(ctx, t.param(x), 2), r);
                 },
                 {&bn.gamma, &bn.beta, &x});
    }
    {
        // The MLP sub-layer with its spiking layers removed. Eval-mode BN: in train
        // mode a BN feeding BN has an exactly zero beta gradient.
        MlpSublayer mlp("fd.mlp", 8, 4, rng);
        for (BatchNorm* bn : {&mlp.bn1, &mlp.bn2}) {
            const std::size_t ch = bn->gamma.numel();
            bn->gamma.value = rng.uniform_tensor(Shape{ch}, 0.5, 1.5);
            bn->beta.value = rng.normal_tensor(Shape{ch});
            bn->state.running_mean = rng.normal_tensor(Shape{ch});
            bn->state.running_var = rng.uniform_tensor(Shape{ch}, 0.5, 2.0);
        }
        Parameter x("fd.x", rng.normal_tensor(Shape{2, 2, 5, 8}));
        const Tensor r = rng.normal_tensor(Shape{2, 2, 5, 8});
        const LifParams lif;
        fd_check(c, "mlp (dense-bn-dense-bn)",
                 [&](Tape& t) {
                     ForwardContext ctx{t, Mode::eval, lif, 2, nullptr};
                     Var h = mlp.bn1.forward(ctx, mlp.fc1.forward(t, t.param(x)), 3);
                     return probe(t, mlp.bn2.forward(ctx, mlp.fc2.forward(t, h), 3), r);
                 },
                 {&mlp.fc1.weight, &mlp.fc2.weight, &mlp.bn1.gamma, &mlp.bn1.beta, &mlp.bn2.gamma, &mlp.bn2.beta, &x});
    }
    for (const TransformPlan& plan : all_lt_plans(16, 32)) {
        Parameter x("fd.x", rng.normal_tensor(Shape{2, 1, 16, 32}));
        const Tensor r = rng.normal_tensor(Shape{2, 1, 16, 32});
        fd_check(c, "LT " + plan_name(plan), [&](Tape& t) { return probe(t, ad::linear_transform(t.param(x), plan), r); },
                 {&x});
    }
    for (SsaOrder order : {SsaOrder::qk_first, SsaOrder::kv_first}) {
        Parameter q("fd.q", rng.normal_tensor(Shape{2, 2, 9, 4}));
        Parameter k("fd.k", rng.normal_tensor(Shape{2, 2, 9, 4}));
        Parameter v("fd.v", rng.normal_tensor(Shape{2, 2, 9, 4}));
        const Tensor r = rng.normal_tensor(Shape{2, 2, 9, 4});
        fd_check(c, "ssa product " + std::string(to_string(order)),
                 [&](Tape& t) { return probe(t, ad::ssa_mix(t.param(q), t.param(k), t.param(v), 0.125, order), r); },
                 {&q, &k, &v});
    }
    {
        Parameter logits("fd.logits", rng.normal_tensor(Shape{6, 5}));
        const std::vector<std::uint16_t> labels{0, 4, 2, 2, 1, 3};
        fd_check(c, "cross-entropy loss", [&](Tape& t) { return ad::cross_entropy(t.param(logits), labels); },
                 {&logits});
    }
    {
        Conv2d conv("fd.conv", 2, 3, rng);
        DepthwiseConv2d dw("fd.dw", 3, rng);
        Parameter x("fd.x", rng.normal_tensor(Shape{2, 2, 5, 6}));
        const Tensor r = rng.normal_tensor(Shape{2, 3, 5, 6});
        fd_check(c, "conv3x3 + depthwise conv3x3",
                 [&](Tape& t) { return probe(t, dw.forward(t, conv.forward(t, t.param(x))), r); },
                 {&conv.weight, &dw.weight, &x});
    }

    c.guarded("lif hand chain", [&] {
        // tau = 2, v_th = 1, v_reset = 0, rectangular surrogate of width 1.
        // H = [0.75, 0.625, 1.3125, 0.125], S = [0, 0, 1, 0], surrogate = [1, 1, 1, 0].
        // Walking back with dV/dH = (1 - S) + (v_reset - H) dS/dH:
        //   t=3: gH = 0                          -> gX = 0
        //   t=2: gH = 2                          -> gX = 1,         gV = 1
        //   t=1: gH = -0.5 + 1 * 0.375 = -0.125  -> gX = -0.0625,   gV = -0.0625
        //   t=0: gH = 1 - 0.0625 * 0.25          -> gX = 0.4921875
        const LifParams p;
        const Tensor x(Shape{4, 1}, std::vector<double>{1.5, 0.5, 2.0, 0.25});
        const Tensor gs(Shape{4, 1}, std::vector<double>{1.0, -0.5, 2.0, 1.0});
        const Tensor want_s(Shape{4, 1}, std::vector<double>{0, 0, 1, 0});
        const Tensor want_gx(Shape{4, 1}, std::vector<double>{0.4921875, -0.0625, 1.0, 0.0});
        const LifTrace tr = lif_forward(x, p);
        c.check("lif forward spikes [0,0,1,0]", tr.spikes == want_s);
        c.check("lif backward equals hand chain exactly", lif_backward(tr, gs, p) == want_gx);

        Tape tape;
        Parameter px("lif.x", x);
        Var s = ad::lif(tape.param(px), p);
        px.zero_grad();
        tape.backward(ad::sum(ad::mul(s, tape.constant(gs))));
        c.check("lif tape gradient equals hand chain exactly", px.grad == want_gx);
    });
}

void suite_census(Checker& c) {
    c.guarded("census L=4 D=384", [&] {
        auto make = [](MixerKind kind) {
            ModelConfig m;
            m.layers = 4;
            m.dim = 384;
            m.channels = 3;
            m.height = m.width = 32;
            m.patch = 4;
            m.num_classes = 10;
            m.mixer.kind = kind;
            return m;
        };
        Spikformer ssa(make(MixerKind::ssa), 1);
        const ParamCensus cs = ssa.param_count();
        for (MixerKind kind : all_mixer_kinds()) {
            if (kind == MixerKind::ssa) continue;
            Spikformer lt(make(kind), 1);
            const ParamCensus cl = lt.param_count();
            const std::size_t diff = cs.weights() - cl.weights();
            c.check("weights(ssa) - weights(" + std::string(to_string(kind)) + ") = 4*4*384^2", diff == 2359296,
                    "difference " + std::to_string(diff) + ", totals " + std::to_string(cs.total()) + " vs " +
                        std::to_string(cl.total()));
            c.check(std::string(to_string(kind)) + " mixer weights = 0", cl.group_weights(".mixer") == 0);
        }
    });
}

}  // namespace

VerifyReport run_verify(const std::vector<std::string>& suites, const std::function<void(const CheckResult&)>& sink) {
    const auto& all = verify_suite_names();
    for (const auto& s : suites)
        if (std::find(all.begin(), all.end(), s) == all.end()) {
            throw InvalidArgument("unknown verify suite '" + s + "' (expected dft|wavelet|ssa|gradient|census)");
        }
    VerifyReport report;
    for (const auto& name : all) {
        if (!suites.empty() && std::find(suites.begin(), suites.end(), name) == suites.end()) continue;
        const std::size_t before = report.checks.size();
        const auto t0 = std::chrono::steady_clock::now();
        Checker c(name, report, sink);
        if (name == "dft") suite_dft(c);
        if (name == "wavelet") suite_wavelet(c);
        if (name == "ssa") suite_ssa(c);
        if (name == "gradient") suite_gradient(c);
        if (name == "census") suite_census(c);
        SuiteSummary s;
        s.name = name;
        s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        for (std::size_t i = before; i < report.checks.size(); ++i) (report.checks[i].passed ? s.passed : s.failed)++;
        report.suites.push_back(s);
    }
    return report;
}

}  // namespace spikemix
