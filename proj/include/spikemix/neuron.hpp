#pragma once

#include "spikemix/autodiff.hpp"
#include "spikemix/tensor.hpp"

namespace spikemix {

enum class SurrogateKind { rectangular, arctan };

// Stand-in for dS/dH used only in the backward pass.
struct SurrogateSpec {
    SurrogateKind kind = SurrogateKind::rectangular;
    double width = 1.0;  // rectangular window width
    double alpha = 2.0;  // arctan sharpness
};

double surrogate_grad(double h_minus_vth, const SurrogateSpec& spec);
Tensor surrogate_grad(const Tensor& h_minus_vth, const SurrogateSpec& spec);

struct LifParams {
    double tau = 2.0;
    double v_th = 1.0;
    double v_reset = 0.0;
    SurrogateSpec surrogate;

    void validate() const;
};

// Full forward record of a LIF layer over the leading (time) axis.
struct LifTrace {
    Tensor spikes;   // S[t], entries exactly 0 or 1
    Tensor h;        // pre-reset potential H[t]
    Tensor v_final;  // stored potential after the last step
};

// Runs the leaky integrate-and-fire recurrence over axis 0 of `x`, starting
// every element at V = v_reset:
//   H = V + (X[t] - (V - v_reset)) / tau
//   S = [H - v_th >= 0]
//   V = H (1 - S) + v_reset S
LifTrace lif_forward(const Tensor& x, const LifParams& params);
Tensor lif_sequence(const Tensor& x, const LifParams& params);

// Backward through time, including the reset path. `grad_spikes` is
// d(loss)/dS[t]; returns d(loss)/dX[t].
Tensor lif_backward(const LifTrace& trace, const Tensor& grad_spikes, const LifParams& params);

namespace ad {
Var lif(Var x, const LifParams& params);
}

}  // namespace spikemix
