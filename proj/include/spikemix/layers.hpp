#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spikemix/autodiff.hpp"
#include "spikemix/neuron.hpp"
#include "spikemix/rng.hpp"

namespace spikemix {

// Called with the site name and the binary output of every SN layer.
using SpikeObserver = std::function<void(std::string_view site, const Tensor& spikes)>;

// Per-forward-pass state shared by every layer.
struct ForwardContext {
    Tape& tape;
    Mode mode = Mode::train;
    LifParams lif;
    std::size_t timesteps = 1;
    const SpikeObserver* observer = nullptr;
};

// Parameters plus non-trainable buffers (batch-norm running statistics).
struct StateRefs {
    std::vector<Parameter*> params;
    std::vector<std::pair<std::string, Tensor*>> buffers;
};

// SN layer over a tensor whose leading axis is T (or T merged with B as
// T-major). Reports the spikes to ctx.observer.
Var spike(ForwardContext& ctx, Var x, std::string_view site);

class Linear {
public:
    Linear() = default;
    Linear(std::string name, std::size_t in, std::size_t out, bool bias, Rng& rng);

    // x[..., in] -> [..., out]
    Var forward(Tape& tape, Var x);
    void collect(StateRefs& refs);

    Parameter weight;  // [in, out]
    std::optional<Parameter> bias;
};

class BatchNorm {
public:
    BatchNorm() = default;
    BatchNorm(std::string name, std::size_t channels);

    Var forward(ForwardContext& ctx, Var x, std::size_t channel_axis);
    void collect(StateRefs& refs);

    std::string name;
    Parameter gamma;
    Parameter beta;
    BatchNormState state;
};

// 3x3, stride 1, zero padding 1, no bias: [M, Cin, H, W] -> [M, Cout, H, W].
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels, Rng& rng);

    Var forward(Tape& tape, Var x);
    void collect(StateRefs& refs);

    Parameter weight;  // [Cout, Cin, 3, 3]
};

// 3x3 depthwise, stride 1, zero padding 1, no bias.
class DepthwiseConv2d {
public:
    DepthwiseConv2d() = default;
    DepthwiseConv2d(std::string name, std::size_t channels, Rng& rng);

    Var forward(Tape& tape, Var x);
    void collect(StateRefs& refs);

    Parameter weight;  // [C, 1, 3, 3]
};

Tensor conv2d_3x3(const Tensor& x, const Tensor& w);
Tensor depthwise_conv2d_3x3(const Tensor& x, const Tensor& w);
Tensor max_pool_2x2(const Tensor& x);

namespace ad {
Var conv2d_3x3(Var x, Var w);
Var depthwise_conv2d_3x3(Var x, Var w);
Var max_pool_2x2(Var x);
}  // namespace ad

}  // namespace spikemix
