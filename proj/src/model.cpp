#include "spikemix/model.hpp"

#include <bit>
#include <cstdio>
#include <map>

#include "binary_io.hpp"
#include "spikemix/error.hpp"

namespace spikemix {

namespace {

constexpr char kCheckpointMagic[4] = {'S', 'P', 'K', 'M'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::string_view to_string(SurrogateKind k) { return k == SurrogateKind::rectangular ? "rectangular" : "arctan"; }

SurrogateKind parse_surrogate(std::string_view s) {
    if (s == "rectangular" || s == "rect") return SurrogateKind::rectangular;
    if (s == "arctan" || s == "atan") return SurrogateKind::arctan;
    throw InvalidArgument("unknown surrogate '" + std::string(s) + "' (expected rectangular|arctan)");
}

std::string family_list(const std::vector<WaveletFamily>& fams) {
    std::string out;
    for (auto f : fams) {
        if (!out.empty()) out += ",";
        out += to_string(f);
    }
    return out;
}

}  // namespace

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

const std::vector<std::string_view>& model_config_keys() {
    static const std::vector<std::string_view> keys{
        "layers",  "dim",       "timesteps",  "channels",    "height",    "width",
        "patch",   "mlp_ratio", "classes",    "mixer",       "heads",     "ssa_scale",
        "ssa_order", "wavelet", "combination", "levels_seq", "levels_feat", "tau",
        "v_th",    "v_reset",   "surrogate",  "surrogate_width", "surrogate_alpha"};
    return keys;
}

std::size_t ModelConfig::sps_blocks() const {
    return patch < 2 ? 0 : static_cast<std::size_t>(std::countr_zero(patch));
}

void ModelConfig::validate() const {
    if (!layers || !dim || !timesteps || !channels || !height || !width || !mlp_ratio || !num_classes) {
        throw InvalidArgument("model config: layers, dim, timesteps, channels, height, width, mlp_ratio and "
                              "classes must be positive");
    }
    if (patch < 2 || !is_power_of_two(patch)) {
        throw InvalidArgument("model config: patch " + std::to_string(patch) + " must be a power of 2 >= 2");
    }
    if (height % patch || width % patch) {
        throw ShapeError("model config: image " + std::to_string(height) + "x" + std::to_string(width) +
                         " is not divisible by patch " + std::to_string(patch));
    }
    if (grid_h() != grid_w()) {
        throw ShapeError("model config: patch grid " + std::to_string(grid_h()) + "x" + std::to_string(grid_w()) +
                         " is not square");
    }
    const std::size_t ramp = std::size_t{1} << (sps_blocks() - 1);
    if (dim % ramp) {
        throw InvalidArgument("model config: dim " + std::to_string(dim) + " must be divisible by " +
                              std::to_string(ramp) + " for the patch-splitter channel ramp");
    }
    if ((mixer.kind == MixerKind::fft1d || mixer.kind == MixerKind::fft2d) && !is_power_of_two(seq_len())) {
        throw LengthError("model config: fft mixers need a power-of-2 sequence length, got N=" +
                          std::to_string(seq_len()));
    }
    mixer.validate(dim);
    lif.validate();
}

ModelConfig ModelConfig::from_config(const Config& c) {
    ModelConfig m;
    m.layers = c.get_size("layers", m.layers);
    m.dim = c.get_size("dim", m.dim);
    m.timesteps = c.get_size("timesteps", m.timesteps);
    m.channels = c.get_size("channels", m.channels);
    m.height = c.get_size("height", m.height);
    m.width = c.get_size("width", m.width);
    m.patch = c.get_size("patch", m.patch);
    m.mlp_ratio = c.get_size("mlp_ratio", m.mlp_ratio);
    m.num_classes = c.get_size("classes", m.num_classes);
    if (c.has("mixer")) m.mixer.kind = parse_mixer(c.get("mixer", ""));
    m.mixer.heads = c.get_size("heads", m.mixer.heads);
    m.mixer.scale = c.get_double("ssa_scale", m.mixer.scale);
    if (c.has("ssa_order")) m.mixer.order = parse_ssa_order(c.get("ssa_order", ""));
    if (c.has("wavelet")) m.mixer.wavelet = parse_wavelet(c.get("wavelet", ""));
    if (c.has("combination")) {
        m.mixer.combination.clear();
        for (const auto& name : c.get_list("combination", "")) m.mixer.combination.push_back(parse_wavelet(name));
    }
    m.mixer.levels_seq = c.get_size("levels_seq", m.mixer.levels_seq);
    m.mixer.levels_feat = c.get_size("levels_feat", m.mixer.levels_feat);
    m.lif.tau = c.get_double("tau", m.lif.tau);
    m.lif.v_th = c.get_double("v_th", m.lif.v_th);
    m.lif.v_reset = c.get_double("v_reset", m.lif.v_reset);
    if (c.has("surrogate")) m.lif.surrogate.kind = parse_surrogate(c.get("surrogate", ""));
    m.lif.surrogate.width = c.get_double("surrogate_width", m.lif.surrogate.width);
    m.lif.surrogate.alpha = c.get_double("surrogate_alpha", m.lif.surrogate.alpha);
    return m;
}

void ModelConfig::to_config(Config& c) const {
    c.set("layers", std::to_string(layers));
    c.set("dim", std::to_string(dim));
    c.set("timesteps", std::to_string(timesteps));
    c.set("channels", std::to_string(channels));
    c.set("height", std::to_string(height));
    c.set("width", std::to_string(width));
    c.set("patch", std::to_string(patch));
    c.set("mlp_ratio", std::to_string(mlp_ratio));
    c.set("classes", std::to_string(num_classes));
    c.set("mixer", std::string(to_string(mixer.kind)));
    c.set("heads", std::to_string(mixer.heads));
    c.set("ssa_scale", format_double(mixer.scale));
    c.set("ssa_order", std::string(to_string(mixer.order)));
    c.set("wavelet", std::string(to_string(mixer.wavelet)));
    c.set("combination", family_list(mixer.combination));
    c.set("levels_seq", std::to_string(mixer.levels_seq));
    c.set("levels_feat", std::to_string(mixer.levels_feat));
    c.set("tau", format_double(lif.tau));
    c.set("v_th", format_double(lif.v_th));
    c.set("v_reset", format_double(lif.v_reset));
    c.set("surrogate", std::string(to_string(lif.surrogate.kind)));
    c.set("surrogate_width", format_double(lif.surrogate.width));
    c.set("surrogate_alpha", format_double(lif.surrogate.alpha));
}

std::size_t ParamCensus::total() const { return weights() + norm_affine(); }

std::size_t ParamCensus::weights() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.weights;
    return n;
}

std::size_t ParamCensus::norm_affine() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.norm_affine;
    return n;
}

std::size_t ParamCensus::group_total(std::string_view suffix) const {
    std::size_t n = 0;
    for (const auto& g : groups)
        if (g.group.ends_with(suffix)) n += g.total();
    return n;
}

std::size_t ParamCensus::group_weights(std::string_view suffix) const {
    std::size_t n = 0;
    for (const auto& g : groups)
        if (g.group.ends_with(suffix)) n += g.weights;
    return n;
}

PatchSplitter::PatchSplitter(const ModelConfig& cfg, Rng& rng) : dim_(cfg.dim) {
    const std::size_t k = cfg.sps_blocks();
    std::size_t in = cfg.channels;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t out = cfg.dim >> (k - 1 - i);
        const std::string name = "sps.block" + std::to_string(i);
        convs.emplace_back(name + ".conv", in, out, rng);
        norms.emplace_back(name + ".bn", out);
        in = out;
    }
}

Var PatchSplitter::forward(ForwardContext& ctx, Var img) {
    const Shape s = img.shape();
    Var x = ad::reshape(img, Shape{s[0] * s[1], s[2], s[3], s[4]});
    for (std::size_t i = 0; i < convs.size(); ++i) {
        x = convs[i].forward(ctx.tape, x);
        x = norms[i].forward(ctx, x, 1);
        x = spike(ctx, x, "sps.block" + std::to_string(i) + ".sn");
        x = ad::max_pool_2x2(x);
    }
    const Shape o = x.shape();
    x = ad::reshape(x, Shape{s[0], s[1], dim_, o[2] * o[3]});
    return ad::permute(x, {0, 1, 3, 2});
}

void PatchSplitter::collect(StateRefs& refs) {
    for (std::size_t i = 0; i < convs.size(); ++i) {
        convs[i].collect(refs);
        norms[i].collect(refs);
    }
}

PositionEmbedding::PositionEmbedding(const ModelConfig& cfg, Rng& rng)
    : conv("cpe.conv", cfg.dim, rng), bn("cpe.bn", cfg.dim), grid_h_(cfg.grid_h()), grid_w_(cfg.grid_w()) {}

Var PositionEmbedding::forward(ForwardContext& ctx, Var p) {
    const Shape s = p.shape();
    if (s.size() != 4 || s[2] != grid_h_ * grid_w_) {
        throw ShapeError("cpe: expected [T, B, " + std::to_string(grid_h_ * grid_w_) + ", D], got " + shape_str(s));
    }
    Var x = ad::reshape(ad::permute(p, {0, 1, 3, 2}), Shape{s[0] * s[1], s[3], grid_h_, grid_w_});
    x = spike(ctx, bn.forward(ctx, conv.forward(ctx.tape, x), 1), "cpe.sn");
    return ad::permute(ad::reshape(x, Shape{s[0], s[1], s[3], s[2]}), {0, 1, 3, 2});
}

void PositionEmbedding::collect(StateRefs& refs) {
    conv.collect(refs);
    bn.collect(refs);
}

MlpSublayer::MlpSublayer(std::string name, std::size_t dim, std::size_t ratio, Rng& rng)
    : fc1(name + ".fc1", dim, dim * ratio, false, rng),
      fc2(name + ".fc2", dim * ratio, dim, false, rng),
      bn1(name + ".bn1", dim * ratio),
      bn2(name + ".bn2", dim),
      name_(std::move(name)) {}

Var MlpSublayer::forward(ForwardContext& ctx, Var x) {
    const std::size_t axis = x.shape().size() - 1;
    Var h = spike(ctx, bn1.forward(ctx, fc1.forward(ctx.tape, x), axis), name_ + ".sn1");
    return spike(ctx, bn2.forward(ctx, fc2.forward(ctx.tape, h), axis), name_ + ".sn2");
}

void MlpSublayer::collect(StateRefs& refs) {
    fc1.collect(refs);
    bn1.collect(refs);
    fc2.collect(refs);
    bn2.collect(refs);
}

EncoderLayer::EncoderLayer(std::size_t index, const ModelConfig& cfg, Rng& rng)
    : mixer(make_mixer("layers." + std::to_string(index) + ".mixer", cfg.mixer, cfg.seq_len(), cfg.dim, rng)),
      mlp("layers." + std::to_string(index) + ".mlp", cfg.dim, cfg.mlp_ratio, rng) {}

Var EncoderLayer::forward(ForwardContext& ctx, Var x) {
    Var mid = ad::add(mixer->forward(ctx, x), x);
    return ad::add(mlp.forward(ctx, mid), mid);
}

void EncoderLayer::collect(StateRefs& refs) {
    mixer->collect(refs);
    mlp.collect(refs);
}

namespace {

const ModelConfig& checked(const ModelConfig& cfg) {
    cfg.validate();
    return cfg;
}

std::vector<EncoderLayer> make_layers(const ModelConfig& cfg, Rng& rng) {
    std::vector<EncoderLayer> out;
    out.reserve(cfg.layers);
    for (std::size_t i = 0; i < cfg.layers; ++i) out.emplace_back(i, cfg, rng);
    return out;
}

}  // namespace

Spikformer::Spikformer(const ModelConfig& cfg, std::uint64_t seed)
    : Spikformer(checked(cfg), Rng(seed)) {}

// Members draw from one generator in declaration order; encoder layers come
// before the head.
Spikformer::Spikformer(const ModelConfig& cfg, Rng&& rng)
    : sps(cfg, rng), cpe(cfg, rng), layers(make_layers(cfg, rng)), head("head", cfg.dim, cfg.num_classes, true, rng),
      cfg_(cfg) {}

Var Spikformer::features(ForwardContext& ctx, const Tensor& img) {
    const Shape& s = img.shape();
    if (s.size() != 5 || s[0] != cfg_.timesteps || s[2] != cfg_.channels || s[3] != cfg_.height ||
        s[4] != cfg_.width || s[1] == 0) {
        throw ShapeError("model: expected input [" + std::to_string(cfg_.timesteps) + ", B, " +
                         std::to_string(cfg_.channels) + ", " + std::to_string(cfg_.height) + ", " +
                         std::to_string(cfg_.width) + "], got " + shape_str(s));
    }
    Var p = sps.forward(ctx, ctx.tape.constant(img));
    Var x = ad::add(p, cpe.forward(ctx, p));
    for (auto& layer : layers) x = layer.forward(ctx, x);
    return x;
}

Var Spikformer::forward(Tape& tape, const Tensor& img, Mode mode, const SpikeObserver* observer) {
    ForwardContext ctx{tape, mode, cfg_.lif, cfg_.timesteps, observer};
    Var x = features(ctx, img);
    Var pooled = ad::mean_axis(x, 2);
    return ad::mean_axis(head.forward(tape, pooled), 0);
}

Tensor Spikformer::predict(const Tensor& img, const SpikeObserver* observer) {
    Tape tape(false);
    return forward(tape, img, Mode::eval, observer).value();
}

StateRefs Spikformer::state() {
    StateRefs refs;
    sps.collect(refs);
    cpe.collect(refs);
    for (auto& layer : layers) layer.collect(refs);
    head.collect(refs);
    return refs;
}

std::vector<Parameter*> Spikformer::parameters() {
    std::vector<Parameter*> out;
    for (Parameter* p : state().params)
        if (p->trainable) out.push_back(p);
    return out;
}

ParamCensus Spikformer::param_count() {
    ParamCensus census;
    std::map<std::string, std::size_t> index;
    auto group_of = [](const std::string& name) {
        std::size_t cut = name.find('.');
        if (name.starts_with("layers.")) {
            cut = name.find('.', cut + 1);
            cut = name.find('.', cut + 1);
        }
        return name.substr(0, cut);
    };
    // Every group appears, even when it owns nothing trainable.
    auto entry = [&](const std::string& g) -> CensusEntry& {
        auto it = index.find(g);
        if (it == index.end()) {
            it = index.emplace(g, census.groups.size()).first;
            census.groups.push_back({g, 0, 0});
        }
        return census.groups[it->second];
    };
    entry("sps");
    entry("cpe");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        entry("layers." + std::to_string(i) + ".mixer");
        entry("layers." + std::to_string(i) + ".mlp");
    }
    entry("head");
    for (Parameter* p : parameters()) {
        CensusEntry& e = entry(group_of(p->name));
        if (p->name.ends_with(".gamma") || p->name.ends_with(".beta")) {
            e.norm_affine += p->numel();
        } else {
            e.weights += p->numel();
        }
    }
    return census;
}

void Spikformer::save(const std::string& path) {
    auto out = io::open_out(path);
    io::write_bytes(out, kCheckpointMagic, 4);
    io::write_le<std::uint32_t>(out, kCheckpointVersion);
    Config c;
    cfg_.to_config(c);
    const std::string text = c.to_text();
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    io::write_bytes(out, text.data(), text.size());
    auto write_entry = [&](const std::string& name, const Tensor& t) {
        io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        io::write_bytes(out, name.data(), name.size());
        io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        std::vector<float> buf(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) buf[i] = static_cast<float>(t[i]);
        io::write_bytes(out, buf.data(), buf.size() * sizeof(float));
    };
    StateRefs refs = state();
    for (Parameter* p : refs.params) write_entry(p->name, p->value);
    for (auto& [name, t] : refs.buffers) write_entry(name, *t);
    io::finish(out, path);
}

std::unique_ptr<Spikformer> Spikformer::load(const std::string& path) {
    auto in = io::open_in(path);
    const std::string what = "checkpoint '" + path + "'";
    char magic[4];
    io::read_bytes(in, magic, 4, what);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw BadMagicError(what + ": bad magic (expected SPKM)");
    const auto version = io::read_le<std::uint32_t>(in, what);
    if (version != kCheckpointVersion) {
        throw FormatError(what + ": unsupported version " + std::to_string(version));
    }
    const auto text_len = io::read_le<std::uint32_t>(in, what);
    std::string text(text_len, '\0');
    io::read_bytes(in, text.data(), text_len, what);
    auto model = std::make_unique<Spikformer>(ModelConfig::from_config(Config::parse(text)), 0);

    std::map<std::string, Tensor*> slots;
    StateRefs refs = model->state();
    for (Parameter* p : refs.params) slots[p->name] = &p->value;
    for (auto& [name, t] : refs.buffers) slots[name] = t;

    for (;;) {
        std::uint32_t name_len = 0;
        if (!io::read_bytes(in, &name_len, sizeof name_len, what, true)) break;
        std::string name(name_len, '\0');
        io::read_bytes(in, name.data(), name_len, what);
        const auto rank = io::read_le<std::uint32_t>(in, what);
        Shape shape(rank);
        for (auto& d : shape) d = io::read_le<std::uint32_t>(in, what);
        auto it = slots.find(name);
        if (it == slots.end()) throw FormatError(what + ": unknown entry '" + name + "'");
        if (it->second->shape() != shape) {
            throw FormatError(what + ": entry '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                              shape_str(it->second->shape()));
        }
        std::vector<float> buf(shape_size(shape));
        io::read_bytes(in, buf.data(), buf.size() * sizeof(float), what);
        Tensor& dst = *it->second;
        for (std::size_t i = 0; i < buf.size(); ++i) dst[i] = buf[i];
        slots.erase(it);
    }
    if (!slots.empty()) throw TruncatedError(what + ": missing entry '" + slots.begin()->first + "'");
    return model;
}

}  // namespace spikemix
