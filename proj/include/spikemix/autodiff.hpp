#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "spikemix/rng.hpp"
#include "spikemix/tensor.hpp"

namespace spikemix {

// Trainable (or frozen) tensor with a gradient accumulator of the same shape.
// The accumulator is only cleared by zero_grad().
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string name, Tensor value, bool trainable = true);

    void zero_grad();
    std::size_t numel() const { return value.size(); }
};

class Tape;

// Handle to a value recorded on a tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Define-by-run reverse-mode tape. Nodes are appended in forward order and
// visited in exact reverse order by backward(). A tape built with
// record_grad == false only stores values (inference).
class Tape {
public:
    using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

    explicit Tape(bool record_grad = true) : record_grad_(record_grad) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return record_grad_; }

    Var constant(Tensor value);
    Var param(Parameter& p);

    // Appends an op result. `backward` receives d(loss)/d(result) and must
    // call accumulate() for each input; it is dropped when no input needs a
    // gradient. `smooth == false` marks a Heaviside spike nonlinearity.
    Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward, bool smooth = true);

    void accumulate(std::size_t id, const Tensor& grad);
    void accumulate(std::size_t id, Tensor&& grad);

    // Seeds d(loss)/d(loss) = 1 and runs every recorded rule in reverse.
    // Parameter nodes add into Parameter::grad.
    void backward(Var loss);

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    const Tensor* grad(std::size_t id) const;
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

    std::size_t size() const { return nodes_.size(); }
    bool has_nonsmooth() const { return nonsmooth_; }
    // Bytes held by recorded values, i.e. what a backward pass keeps alive.
    std::size_t value_bytes() const;

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool has_grad = false;
        bool requires_grad = false;
        Backward backward;
        Parameter* param = nullptr;
    };

    std::deque<Node> nodes_;
    bool record_grad_ = true;
    bool nonsmooth_ = false;
    bool backward_done_ = false;
};

namespace ad {

Var matmul(Var a, Var b, bool transpose_a = false, bool transpose_b = false);
Var add(Var a, Var b);
// x[..., K] + bias[K]
Var add_bias(Var x, Var bias);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var square(Var a);
Var sum(Var a);
Var mean(Var a);
Var mean_axis(Var a, std::size_t axis);
Var permute(Var a, std::vector<std::size_t> order);
Var reshape(Var a, Shape shape);
Var batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, Mode mode, std::size_t channel_axis);

}  // namespace ad

struct FiniteDifferenceOptions {
    double step = 1e-4;
    // Coordinates sampled per parameter (all of them when the tensor is smaller).
    std::size_t coords_per_param = 16;
    std::uint64_t seed = 0;
};

// Max over sampled coordinates of |analytic - central| / (|analytic| + 1e-8).
// `loss` must record a scalar onto the given tape using Tape::param for each
// entry of `params`. Throws TapeError when the recorded graph contains a
// spiking (Heaviside) node.
double finite_difference_check(const std::function<Var(Tape&)>& loss, std::span<Parameter* const> params,
                               const FiniteDifferenceOptions& options = {});

}  // namespace spikemix
