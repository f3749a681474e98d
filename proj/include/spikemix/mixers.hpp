#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "spikemix/layers.hpp"
#include "spikemix/transforms.hpp"

namespace spikemix {

enum class MixerKind { ssa, fft1d, fft2d, wt1d, wt2d, wt2d_combination };
enum class SsaOrder { qk_first, kv_first };

std::string_view to_string(MixerKind kind);
MixerKind parse_mixer(std::string_view name);
std::string_view to_string(SsaOrder order);
SsaOrder parse_ssa_order(std::string_view name);
const std::vector<MixerKind>& all_mixer_kinds();

struct MixerSpec {
    MixerKind kind = MixerKind::ssa;
    // SSA: 0 selects D / 32 heads (per-head width 32), at least one.
    std::size_t heads = 0;
    double scale = 0.125;
    SsaOrder order = SsaOrder::qk_first;
    // Wavelet mixers.
    WaveletFamily wavelet = WaveletFamily::haar;
    std::vector<WaveletFamily> combination = all_wavelet_families();
    std::size_t levels_seq = 0;   // 0: default depth
    std::size_t levels_feat = 0;  // 0: default depth

    std::size_t resolved_heads(std::size_t dim) const;
    void validate(std::size_t dim) const;
    bool is_linear_transform() const { return kind != MixerKind::ssa; }
};

// Plan realizing an LT mixer kind for sequence length n and width d.
TransformPlan make_transform_plan(const MixerSpec& spec, std::size_t n, std::size_t d);

// [T, B, N, D] <-> [T, B, H, N, D/H]
Tensor split_heads(const Tensor& x, std::size_t heads);
Tensor merge_heads(const Tensor& x);

// s * Q K^T V over the trailing [N, d] axes; leading axes are independent.
// qk_first builds the N x N attention map (O(N^2 d)); kv_first builds the
// d x d product K^T V (O(N d^2)). The scale is applied once, last, so binary
// inputs give identical results for both orders.
Tensor ssa_mix(const Tensor& q, const Tensor& k, const Tensor& v, double scale, SsaOrder order);
// Q K^T for inspection.
Tensor attention_map(const Tensor& q, const Tensor& k);

namespace ad {
Var ssa_mix(Var q, Var k, Var v, double scale, SsaOrder order);
// Fixed linear map; backward applies plan.adjoint. `plan` must outlive the tape.
Var linear_transform(Var x, const TransformPlan& plan);
}  // namespace ad

// Sequence-mixing sub-layer: [T, B, N, D] -> binary [T, B, N, D]. The
// residual add is done by the caller.
class SequenceMixer {
public:
    virtual ~SequenceMixer() = default;
    virtual MixerKind kind() const = 0;
    virtual Var forward(ForwardContext& ctx, Var x) = 0;
    virtual void collect(StateRefs& refs) = 0;
};

struct QkvVars {
    Var q, k, v;
};

class SsaSublayer final : public SequenceMixer {
public:
    SsaSublayer(std::string name, std::size_t dim, const MixerSpec& spec, Rng& rng);

    MixerKind kind() const override { return MixerKind::ssa; }
    // Q = SN(BN(x W_Q)), likewise K and V; each [T, B, N, D] and binary.
    QkvVars project_qkv(ForwardContext& ctx, Var x);
    // SN(BN(Dense(SN(s Q K^T V))))
    Var forward(ForwardContext& ctx, Var x) override;
    void collect(StateRefs& refs) override;

    const MixerSpec& spec() const { return spec_; }
    std::size_t heads() const { return heads_; }

    Linear w_q, w_k, w_v, w_o;
    BatchNorm bn_q, bn_k, bn_v, bn_o;

private:
    std::string name_;
    MixerSpec spec_;
    std::size_t heads_;
};

class LtSublayer final : public SequenceMixer {
public:
    LtSublayer(std::string name, std::size_t seq_len, std::size_t dim, const MixerSpec& spec);

    MixerKind kind() const override { return spec_.kind; }
    // Transform only, per time step.
    Var mix(Var x) const;
    // SN(BN(LT(x)))
    Var forward(ForwardContext& ctx, Var x) override;
    void collect(StateRefs& refs) override;

    const TransformPlan& plan() const { return plan_; }

    BatchNorm bn;

private:
    std::string name_;
    MixerSpec spec_;
    TransformPlan plan_;
};

std::unique_ptr<SequenceMixer> make_mixer(std::string name, const MixerSpec& spec, std::size_t seq_len,
                                          std::size_t dim, Rng& rng);

}  // namespace spikemix
