#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "spikemix/config.hpp"
#include "spikemix/layers.hpp"
#include "spikemix/mixers.hpp"

namespace spikemix {

struct ModelConfig {
    std::size_t layers = 2;
    std::size_t dim = 64;
    std::size_t timesteps = 4;
    std::size_t channels = 1;
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t patch = 4;
    std::size_t mlp_ratio = 4;
    std::size_t num_classes = 2;
    MixerSpec mixer;
    LifParams lif;

    std::size_t grid_h() const { return height / patch; }
    std::size_t grid_w() const { return width / patch; }
    std::size_t seq_len() const { return grid_h() * grid_w(); }
    // log2(patch) convolution blocks in the patch splitter.
    std::size_t sps_blocks() const;
    void validate() const;

    // Reads the model keys of `cfg`, keeping defaults for absent ones.
    static ModelConfig from_config(const Config& cfg);
    // Writes every model key; doubles use round-trip precision.
    void to_config(Config& cfg) const;
};

std::string format_double(double v);
// Keys understood by ModelConfig::from_config.
const std::vector<std::string_view>& model_config_keys();

// Trainable scalar counts per module group.
struct CensusEntry {
    std::string group;        // sps, cpe, layers.<i>.mixer, layers.<i>.mlp, head
    std::size_t weights = 0;  // dense / conv weights and biases
    std::size_t norm_affine = 0;  // batch-norm gamma and beta

    std::size_t total() const { return weights + norm_affine; }
};

struct ParamCensus {
    std::vector<CensusEntry> groups;

    std::size_t total() const;
    std::size_t weights() const;
    std::size_t norm_affine() const;
    // Sum over groups whose name ends with `suffix` (e.g. ".mixer").
    std::size_t group_total(std::string_view suffix) const;
    std::size_t group_weights(std::string_view suffix) const;
};

// k blocks of conv3x3 -> BN -> SN -> maxpool2, then flatten to [T, B, N, D].
class PatchSplitter {
public:
    PatchSplitter(const ModelConfig& cfg, Rng& rng);

    Var forward(ForwardContext& ctx, Var img);  // [T, B, C, H, W]
    void collect(StateRefs& refs);

    std::vector<Conv2d> convs;
    std::vector<BatchNorm> norms;

private:
    std::size_t dim_;
};

// Spike-form relative position embedding: depthwise conv3x3 -> BN -> SN on
// the patch grid.
class PositionEmbedding {
public:
    PositionEmbedding(const ModelConfig& cfg, Rng& rng);

    Var forward(ForwardContext& ctx, Var p);  // [T, B, N, D] -> binary, same shape
    void collect(StateRefs& refs);

    DepthwiseConv2d conv;
    BatchNorm bn;

private:
    std::size_t grid_h_, grid_w_;
};

// Dense(D -> rD) -> BN -> SN -> Dense(rD -> D) -> BN -> SN
class MlpSublayer {
public:
    MlpSublayer(std::string name, std::size_t dim, std::size_t ratio, Rng& rng);

    Var forward(ForwardContext& ctx, Var x);
    void collect(StateRefs& refs);

    Linear fc1, fc2;
    BatchNorm bn1, bn2;

private:
    std::string name_;
};

class EncoderLayer {
public:
    EncoderLayer(std::size_t index, const ModelConfig& cfg, Rng& rng);

    // x' = mixer(x) + x;  out = mlp(x') + x'
    Var forward(ForwardContext& ctx, Var x);
    void collect(StateRefs& refs);

    std::unique_ptr<SequenceMixer> mixer;
    MlpSublayer mlp;
};

class Spikformer {
public:
    Spikformer(const ModelConfig& cfg, std::uint64_t seed);
    Spikformer(const Spikformer&) = delete;
    Spikformer& operator=(const Spikformer&) = delete;

    const ModelConfig& config() const { return cfg_; }

    // img: [T, B, C, H, W] -> logits [B, num_classes] (time-averaged).
    Var forward(Tape& tape, const Tensor& img, Mode mode, const SpikeObserver* observer = nullptr);
    // Patch features X_L before pooling: [T, B, N, D].
    Var features(ForwardContext& ctx, const Tensor& img);
    // Eval-mode logits without a gradient tape.
    Tensor predict(const Tensor& img, const SpikeObserver* observer = nullptr);

    StateRefs state();
    std::vector<Parameter*> parameters();
    ParamCensus param_count();

    // SPKM checkpoint; parameters and BN running statistics stored as f32.
    void save(const std::string& path);
    static std::unique_ptr<Spikformer> load(const std::string& path);

    PatchSplitter sps;
    PositionEmbedding cpe;
    std::vector<EncoderLayer> layers;
    Linear head;

private:
    Spikformer(const ModelConfig& cfg, Rng&& rng);

    ModelConfig cfg_;
};

}  // namespace spikemix
