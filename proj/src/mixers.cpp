#include "spikemix/mixers.hpp"

#include <algorithm>

#include "spikemix/error.hpp"

namespace spikemix {

std::string_view to_string(MixerKind kind) {
    switch (kind) {
        case MixerKind::ssa: return "ssa";
        case MixerKind::fft1d: return "fft1d";
        case MixerKind::fft2d: return "fft2d";
        case MixerKind::wt1d: return "wt1d";
        case MixerKind::wt2d: return "wt2d";
        case MixerKind::wt2d_combination: return "wt2d-combination";
    }
    return "?";
}

MixerKind parse_mixer(std::string_view name) {
    for (MixerKind k : all_mixer_kinds())
        if (to_string(k) == name) return k;
    if (name == "wt2d_combination") return MixerKind::wt2d_combination;
    throw InvalidArgument("unknown mixer '" + std::string(name) +
                          "' (expected ssa|fft1d|fft2d|wt1d|wt2d|wt2d-combination)");
}

std::string_view to_string(SsaOrder order) { return order == SsaOrder::qk_first ? "qk-first" : "kv-first"; }

SsaOrder parse_ssa_order(std::string_view name) {
    if (name == "qk-first" || name == "qk_first") return SsaOrder::qk_first;
    if (name == "kv-first" || name == "kv_first") return SsaOrder::kv_first;
    throw InvalidArgument("unknown SSA order '" + std::string(name) + "' (expected qk-first|kv-first)");
}

const std::vector<MixerKind>& all_mixer_kinds() {
    static const std::vector<MixerKind> kinds{MixerKind::ssa, MixerKind::fft1d, MixerKind::fft2d,
                                              MixerKind::wt1d, MixerKind::wt2d, MixerKind::wt2d_combination};
    return kinds;
}

std::size_t MixerSpec::resolved_heads(std::size_t dim) const {
    if (heads) return heads;
    return std::max<std::size_t>(1, dim / 32);
}

void MixerSpec::validate(std::size_t dim) const {
    if (kind == MixerKind::ssa) {
        const std::size_t h = resolved_heads(dim);
        if (dim % h != 0) {
            throw InvalidArgument("SSA: feature dim " + std::to_string(dim) + " is not divisible by " +
                                  std::to_string(h) + " heads");
        }
        if (!(scale > 0.0)) throw InvalidArgument("SSA scale must be positive");
    }
    if (kind == MixerKind::wt2d_combination && combination.empty()) {
        throw InvalidArgument("wt2d-combination needs at least one wavelet family");
    }
}

TransformPlan make_transform_plan(const MixerSpec& spec, std::size_t n, std::size_t d) {
    switch (spec.kind) {
        case MixerKind::fft1d: return TransformPlan(TransformKind::fft1d, n, d);
        case MixerKind::fft2d: return TransformPlan(TransformKind::fft2d, n, d);
        case MixerKind::wt1d:
            return TransformPlan(TransformKind::wt1d, n, d, {spec.wavelet}, spec.levels_seq, spec.levels_feat);
        case MixerKind::wt2d:
            return TransformPlan(TransformKind::wt2d, n, d, {spec.wavelet}, spec.levels_seq, spec.levels_feat);
        case MixerKind::wt2d_combination:
            return TransformPlan(TransformKind::wt2d_combination, n, d, spec.combination, spec.levels_seq,
                                 spec.levels_feat);
        case MixerKind::ssa: break;
    }
    throw InvalidArgument("SSA is not a linear transform mixer");
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
    if (x.rank() != 4 || heads == 0 || x.dim(3) % heads != 0) {
        throw ShapeError("split_heads: cannot split " + shape_str(x.shape()) + " into " + std::to_string(heads) +
                         " heads");
    }
    const Shape& s = x.shape();
    return permute(x.reshaped(Shape{s[0], s[1], s[2], heads, s[3] / heads}), {0, 1, 3, 2, 4});
}

Tensor merge_heads(const Tensor& x) {
    if (x.rank() != 5) throw ShapeError("merge_heads: expected [T,B,H,N,d], got " + shape_str(x.shape()));
    const Shape& s = x.shape();
    return permute(x, {0, 1, 3, 2, 4}).reshaped(Shape{s[0], s[1], s[3], s[2] * s[4]});
}

namespace {

constexpr std::size_t kRowBlock = 64;

struct HeadDims {
    std::size_t batch;
    std::size_t n;
    std::size_t d;
};

HeadDims head_dims(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.rank() < 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
        throw ShapeError("ssa_mix: head mismatch between Q " + shape_str(q.shape()) + ", K " + shape_str(k.shape()) +
                         ", V " + shape_str(v.shape()));
    }
    const std::size_t n = q.dim(q.rank() - 2), d = q.dim(q.rank() - 1);
    return {q.size() / (n * d), n, d};
}

// [n, d] -> [d, n], so Q K^T runs as a plain row-major product.
void transpose(const double* src, std::size_t n, std::size_t d, std::vector<double>& dst) {
    dst.resize(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) dst[j * n + i] = src[i * d + j];
}

void mix_qk_first(const double* q, const double* k, const double* v, double* out, std::size_t n, std::size_t d,
                  std::vector<double>& attn, std::vector<double>& kt) {
    transpose(k, n, d, kt);
    for (std::size_t i0 = 0; i0 < n; i0 += kRowBlock) {
        const std::size_t rows = std::min(kRowBlock, n - i0);
        attn.assign(rows * n, 0.0);
        kernels::gemm_nn(q + i0 * d, kt.data(), attn.data(), rows, d, n);
        kernels::gemm_nn(attn.data(), v, out + i0 * d, rows, n, d);
    }
}

void mix_kv_first(const double* q, const double* k, const double* v, double* out, std::size_t n, std::size_t d,
                  std::vector<double>& kv) {
    kv.assign(d * d, 0.0);
    kernels::gemm_tn(k, v, kv.data(), d, n, d);
    kernels::gemm_nn(q, kv.data(), out, n, d, d);
}

}  // namespace

Tensor ssa_mix(const Tensor& q, const Tensor& k, const Tensor& v, double s, SsaOrder order) {
    const HeadDims hd = head_dims(q, k, v);
    Tensor out(q.shape());
    std::vector<double> scratch, kt;
    const std::size_t slice = hd.n * hd.d;
    for (std::size_t b = 0; b < hd.batch; ++b) {
        const std::size_t off = b * slice;
        if (order == SsaOrder::qk_first) {
            mix_qk_first(q.ptr() + off, k.ptr() + off, v.ptr() + off, out.ptr() + off, hd.n, hd.d, scratch, kt);
        } else {
            mix_kv_first(q.ptr() + off, k.ptr() + off, v.ptr() + off, out.ptr() + off, hd.n, hd.d, scratch);
        }
    }
    for (double& x : out.data()) x *= s;
    return out;
}

Tensor attention_map(const Tensor& q, const Tensor& k) { return matmul(q, k, false, true); }

namespace ad {

Var ssa_mix(Var q, Var k, Var v, double s, SsaOrder order) {
    Tensor out = spikemix::ssa_mix(q.value(), k.value(), v.value(), s, order);
    const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
    auto rule = [iq, ik, iv, s, order](Tape& t, const Tensor& g) {
        const Tensor& qv = t.value(iq);
        const Tensor& kv = t.value(ik);
        const Tensor& vv = t.value(iv);
        const HeadDims hd = head_dims(qv, kv, vv);
        const std::size_t n = hd.n, d = hd.d, slice = n * d;
        Tensor gs = scale(g, s);
        Tensor gq(qv.shape()), gk(kv.shape()), gvv(vv.shape());
        std::vector<double> a, ga, kt, vt;
        for (std::size_t b = 0; b < hd.batch; ++b) {
            const std::size_t off = b * slice;
            const double* Q = qv.ptr() + off;
            const double* K = kv.ptr() + off;
            const double* V = vv.ptr() + off;
            const double* G = gs.ptr() + off;
            if (order == SsaOrder::qk_first) {
                // out = A V with A = Q K^T, recomputed one row block at a time.
                transpose(K, n, d, kt);
                transpose(V, n, d, vt);
                for (std::size_t i0 = 0; i0 < n; i0 += kRowBlock) {
                    const std::size_t rows = std::min(kRowBlock, n - i0);
                    a.assign(rows * n, 0.0);
                    kernels::gemm_nn(Q + i0 * d, kt.data(), a.data(), rows, d, n);
                    kernels::gemm_tn(a.data(), G + i0 * d, gvv.ptr() + off, n, rows, d);
                    ga.assign(rows * n, 0.0);
                    kernels::gemm_nn(G + i0 * d, vt.data(), ga.data(), rows, d, n);
                    kernels::gemm_nn(ga.data(), K, gq.ptr() + off + i0 * d, rows, n, d);
                    kernels::gemm_tn(ga.data(), Q + i0 * d, gk.ptr() + off, n, rows, d);
                }
            } else {
                // out = Q M with M = K^T V.
                a.assign(d * d, 0.0);
                kernels::gemm_tn(K, V, a.data(), d, n, d);
                kernels::gemm_nt(G, a.data(), gq.ptr() + off, n, d, d);
                ga.assign(d * d, 0.0);
                kernels::gemm_tn(Q, G, ga.data(), d, n, d);
                kernels::gemm_nt(V, ga.data(), gk.ptr() + off, n, d, d);
                kernels::gemm_nn(K, ga.data(), gvv.ptr() + off, n, d, d);
            }
        }
        t.accumulate(iq, std::move(gq));
        t.accumulate(ik, std::move(gk));
        t.accumulate(iv, std::move(gvv));
    };
    return q.tape().record(std::move(out), {q, k, v}, std::move(rule));
}

Var linear_transform(Var x, const TransformPlan& plan) {
    const std::size_t ix = x.id();
    const TransformPlan* p = &plan;
    return x.tape().record(plan.apply(x.value()), {x},
                           [ix, p](Tape& t, const Tensor& g) { t.accumulate(ix, p->adjoint(g)); });
}

}  // namespace ad

namespace {

Var split_heads_var(Var x, std::size_t heads) {
    const Shape s = x.shape();
    return ad::permute(ad::reshape(x, Shape{s[0], s[1], s[2], heads, s[3] / heads}), {0, 1, 3, 2, 4});
}

Var merge_heads_var(Var x) {
    const Shape s = x.shape();
    return ad::reshape(ad::permute(x, {0, 1, 3, 2, 4}), Shape{s[0], s[1], s[3], s[2] * s[4]});
}

void require_activation(const Var& x, const char* who) {
    if (x.shape().size() != 4) {
        throw ShapeError(std::string(who) + ": expected [T, B, N, D], got " + shape_str(x.shape()));
    }
}

}  // namespace

SsaSublayer::SsaSublayer(std::string name, std::size_t dim, const MixerSpec& spec, Rng& rng)
    : w_q(name + ".w_q", dim, dim, false, rng),
      w_k(name + ".w_k", dim, dim, false, rng),
      w_v(name + ".w_v", dim, dim, false, rng),
      w_o(name + ".w_o", dim, dim, false, rng),
      bn_q(name + ".bn_q", dim),
      bn_k(name + ".bn_k", dim),
      bn_v(name + ".bn_v", dim),
      bn_o(name + ".bn_o", dim),
      name_(std::move(name)),
      spec_(spec),
      heads_(spec.resolved_heads(dim)) {
    spec_.validate(dim);
}

QkvVars SsaSublayer::project_qkv(ForwardContext& ctx, Var x) {
    require_activation(x, "ssa");
    Tape& tape = ctx.tape;
    QkvVars r;
    r.q = spike(ctx, bn_q.forward(ctx, w_q.forward(tape, x), 3), name_ + ".q_sn");
    r.k = spike(ctx, bn_k.forward(ctx, w_k.forward(tape, x), 3), name_ + ".k_sn");
    r.v = spike(ctx, bn_v.forward(ctx, w_v.forward(tape, x), 3), name_ + ".v_sn");
    return r;
}

Var SsaSublayer::forward(ForwardContext& ctx, Var x) {
    QkvVars qkv = project_qkv(ctx, x);
    Var mixed = ad::ssa_mix(split_heads_var(qkv.q, heads_), split_heads_var(qkv.k, heads_),
                            split_heads_var(qkv.v, heads_), spec_.scale, spec_.order);
    Var attn = spike(ctx, merge_heads_var(mixed), name_ + ".attn_sn");
    return spike(ctx, bn_o.forward(ctx, w_o.forward(ctx.tape, attn), 3), name_ + ".out_sn");
}

void SsaSublayer::collect(StateRefs& refs) {
    for (Linear* l : {&w_q, &w_k, &w_v, &w_o}) l->collect(refs);
    for (BatchNorm* b : {&bn_q, &bn_k, &bn_v, &bn_o}) b->collect(refs);
}

LtSublayer::LtSublayer(std::string name, std::size_t seq_len, std::size_t dim, const MixerSpec& spec)
    : bn(name + ".bn", dim), name_(std::move(name)), spec_(spec), plan_(make_transform_plan(spec, seq_len, dim)) {
    spec_.validate(dim);
}

Var LtSublayer::mix(Var x) const {
    require_activation(x, "lt");
    return ad::linear_transform(x, plan_);
}

Var LtSublayer::forward(ForwardContext& ctx, Var x) {
    return spike(ctx, bn.forward(ctx, mix(x), 3), name_ + ".sn");
}

void LtSublayer::collect(StateRefs& refs) { bn.collect(refs); }

std::unique_ptr<SequenceMixer> make_mixer(std::string name, const MixerSpec& spec, std::size_t seq_len,
                                          std::size_t dim, Rng& rng) {
    if (spec.kind == MixerKind::ssa) return std::make_unique<SsaSublayer>(std::move(name), dim, spec, rng);
    return std::make_unique<LtSublayer>(std::move(name), seq_len, dim, spec);
}

}  // namespace spikemix
