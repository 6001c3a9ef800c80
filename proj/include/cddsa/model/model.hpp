#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cddsa/core/layers.hpp"

// The disentanglement networks: a U-Net anatomy encoder producing a T-channel
// spatial representation, a variational style encoder producing a Z-d Gaussian,
// a reconstruction decoder driven by AdaIN whose affine parameters come from
// per-block style reconstruction modules, and a two-block segmentor that sees
// only the anatomical representation.

namespace cddsa::model {

using nn::Array;
using nn::Shape;
using nn::Var;

enum class ActivationKind { tanh, softmax, gumbel_hard, gumbel_soft };

inline std::string to_string(ActivationKind k) {
    switch (k) {
        case ActivationKind::tanh: return "tanh";
        case ActivationKind::softmax: return "softmax";
        case ActivationKind::gumbel_hard: return "gumbel_hard";
        case ActivationKind::gumbel_soft: return "gumbel_soft";
    }
    return "tanh";
}

inline ActivationKind activation_from_string(const std::string& s) {
    if (s == "tanh") return ActivationKind::tanh;
    if (s == "softmax") return ActivationKind::softmax;
    if (s == "gumbel_hard") return ActivationKind::gumbel_hard;
    if (s == "gumbel_soft") return ActivationKind::gumbel_soft;
    throw ConfigError("unknown anatomy activation kind: " + s);
}

struct ModelConfig {
    int T = 8;
    int Z = 16;
    int K = 3;
    int image_channels = 3;
    std::vector<int> unet_channels{16, 32, 64, 128, 256};
    std::vector<int> style_channels{16, 32, 64, 128};
    std::vector<int> decoder_channels{32, 32, 16};
    int seg_hidden = 64;
    double leaky_slope = 0.2;
    double gumbel_tau = 0.5;
    double adain_eps = 1e-8;
    ActivationKind activation = ActivationKind::tanh;

    int srm_hidden(int block_channels) const { return std::max(Z, block_channels / 2); }

    void validate() const {
        if (T < 1 || Z < 1 || K < 2 || image_channels < 1)
            throw ConfigError("ModelConfig: T/Z/image_channels must be >= 1 and K >= 2");
        if (unet_channels.size() != 5) throw ConfigError("ModelConfig: unet_channels needs 5 entries");
        if (decoder_channels.size() != 3)
            throw ConfigError("ModelConfig: decoder_channels needs 3 entries");
        if (style_channels.empty()) throw ConfigError("ModelConfig: style_channels empty");
        for (int c : unet_channels)
            if (c <= 0) throw ConfigError("ModelConfig: channel counts must be positive");
        if (gumbel_tau <= 0) throw ConfigError("ModelConfig: gumbel_tau must be positive");
    }
};

enum class StyleProvenance { sampled, mean, augmented_linear, augmented_gaussian };

template <typename S>
struct AnatomicalRepresentation {
    Array<S> tensor;  // (T, H, W)
    ActivationKind kind = ActivationKind::tanh;
};

template <typename S>
struct StyleDistribution {
    std::vector<S> mean;
    std::vector<S> variance;  // strictly positive
};

template <typename S>
struct StyleCode {
    std::vector<S> z;
    StyleProvenance provenance = StyleProvenance::sampled;
};

enum class SampleMode { reparameterized, mean };

// Channel-axis activation at the anatomy encoder output. Gumbel kinds draw
// noise from `rng` while training; evaluation uses zero noise so the forward
// pass stays deterministic.
template <typename S>
Var<S> anatomy_activation(Var<S> logits, ActivationKind kind, S temperature, Rng* rng,
                          bool training) {
    switch (kind) {
        case ActivationKind::tanh: return nn::tanh_op(logits);
        case ActivationKind::softmax: return nn::softmax_channels(logits);
        case ActivationKind::gumbel_hard:
        case ActivationKind::gumbel_soft: {
            if (temperature <= S(0))
                throw ConfigError("anatomy_activation: gumbel temperature must be positive");
            Array<S> noise(logits.shape());
            if (training && rng)
                for (long i = 0; i < noise.numel(); ++i)
                    noise[i] = static_cast<S>(rng->gumbel());
            return nn::gumbel_softmax_channels(logits, noise, temperature,
                                               kind == ActivationKind::gumbel_hard);
        }
    }
    throw ConfigError("anatomy_activation: unknown kind");
}

template <typename S>
struct ConvBnLrelu {
    nn::Conv2d<S> conv;
    nn::BatchNorm2d<S> bn;
    S slope = S(0.2);

    ConvBnLrelu() = default;
    ConvBnLrelu(const std::string& name, int cin, int cout, int k, int stride, int pad, S slope_,
                Rng& rng)
        : conv(name + ".conv", cin, cout, k, stride, pad, rng, slope_),
          bn(name + ".bn", cout),
          slope(slope_) {}

    Var<S> forward(Var<S> x, bool training) {
        return nn::leaky_relu(bn.forward(conv.forward(x), training), slope);
    }
    void collect(nn::ParamRefs<S>& out) {
        conv.collect(out);
        bn.collect(out);
    }
    void collect_buffers(nn::BufferRefs<S>& out) { bn.collect_buffers(out); }
    void set_bn_updates(bool v) { bn.update_stats = v; }
};

// U-Net backbone; the last layer maps to T channels and is activated outside.
template <typename S>
struct AnatomyEncoder {
    std::vector<ConvBnLrelu<S>> enc1, enc2;      // two convs per scale
    std::vector<ConvBnLrelu<S>> up, dec1, dec2;  // decoder path
    nn::Conv2d<S> head;
    int scales = 5;

    AnatomyEncoder() = default;
    AnatomyEncoder(const ModelConfig& cfg, Rng& rng) {
        const auto& ch = cfg.unet_channels;
        const S slope = static_cast<S>(cfg.leaky_slope);
        int cin = cfg.image_channels;
        for (int i = 0; i < scales; ++i) {
            const std::string base = "e_ana.enc" + std::to_string(i);
            enc1.emplace_back(base + ".a", cin, ch[i], 3, 1, 1, slope, rng);
            enc2.emplace_back(base + ".b", ch[i], ch[i], 3, 1, 1, slope, rng);
            cin = ch[i];
        }
        for (int i = scales - 2; i >= 0; --i) {
            const std::string base = "e_ana.dec" + std::to_string(i);
            up.emplace_back(base + ".up", ch[i + 1], ch[i], 3, 1, 1, slope, rng);
            dec1.emplace_back(base + ".a", 2 * ch[i], ch[i], 3, 1, 1, slope, rng);
            dec2.emplace_back(base + ".b", ch[i], ch[i], 3, 1, 1, slope, rng);
        }
        head = nn::Conv2d<S>("e_ana.head", ch[0], cfg.T, 1, 1, 0, rng, slope);
    }

    Var<S> forward(Var<S> x, bool training) {
        const auto& s = x.shape();
        if (s.size() != 4 || s[2] % 16 != 0 || s[3] % 16 != 0)
            throw ShapeError("anatomy encoder: spatial dims must be divisible by 16, got " +
                             nn::shape_str(s));
        std::vector<Var<S>> skips;
        Var<S> h = x;
        for (int i = 0; i < scales; ++i) {
            h = enc2[i].forward(enc1[i].forward(h, training), training);
            if (i < scales - 1) {
                skips.push_back(h);
                h = nn::maxpool2x2(h);
            }
        }
        for (int d = 0; d < scales - 1; ++d) {
            const int skip_index = scales - 2 - d;
            h = up[d].forward(nn::upsample_nearest2x(h), training);
            h = nn::concat_channels(h, skips[static_cast<std::size_t>(skip_index)]);
            h = dec2[d].forward(dec1[d].forward(h, training), training);
        }
        return head.forward(h);
    }

    void collect(nn::ParamRefs<S>& out) {
        for (auto& b : enc1) b.collect(out);
        for (auto& b : enc2) b.collect(out);
        for (auto& b : up) b.collect(out);
        for (auto& b : dec1) b.collect(out);
        for (auto& b : dec2) b.collect(out);
        head.collect(out);
    }
    void collect_buffers(nn::BufferRefs<S>& out) {
        for (auto& b : enc1) b.collect_buffers(out);
        for (auto& b : enc2) b.collect_buffers(out);
        for (auto& b : up) b.collect_buffers(out);
        for (auto& b : dec1) b.collect_buffers(out);
        for (auto& b : dec2) b.collect_buffers(out);
    }
    void set_bn_updates(bool v) {
        for (auto& b : enc1) b.set_bn_updates(v);
        for (auto& b : enc2) b.set_bn_updates(v);
        for (auto& b : up) b.set_bn_updates(v);
        for (auto& b : dec1) b.set_bn_updates(v);
        for (auto& b : dec2) b.set_bn_updates(v);
    }
};

// VAE-style encoder: strided conv blocks, global average pooling, then one FC
// head for the mean and one for the log-variance.
template <typename S>
struct StyleEncoder {
    std::vector<ConvBnLrelu<S>> blocks;
    nn::Linear<S> fc_mean, fc_logvar;
    S var_floor = S(1e-6), var_ceil = S(1e6);

    StyleEncoder() = default;
    StyleEncoder(const ModelConfig& cfg, Rng& rng) {
        const S slope = static_cast<S>(cfg.leaky_slope);
        int cin = cfg.image_channels;
        for (std::size_t i = 0; i < cfg.style_channels.size(); ++i) {
            blocks.emplace_back("e_sty.block" + std::to_string(i), cin, cfg.style_channels[i], 3,
                                2, 1, slope, rng);
            cin = cfg.style_channels[i];
        }
        fc_mean = nn::Linear<S>("e_sty.fc_mean", cin, cfg.Z, rng);
        fc_logvar = nn::Linear<S>("e_sty.fc_logvar", cin, cfg.Z, rng);
    }

    // Returns (mean, variance); the variance passes through exp with a clamp.
    std::pair<Var<S>, Var<S>> forward(Var<S> x, bool training) {
        Var<S> h = x;
        for (auto& b : blocks) h = b.forward(h, training);
        Var<S> pooled = nn::global_avg_pool(h);
        Var<S> u = fc_mean.forward(pooled);
        Var<S> v = nn::clamp_op(nn::exp_op(fc_logvar.forward(pooled)), var_floor, var_ceil);
        return {u, v};
    }

    void collect(nn::ParamRefs<S>& out) {
        for (auto& b : blocks) b.collect(out);
        fc_mean.collect(out);
        fc_logvar.collect(out);
    }
    void collect_buffers(nn::BufferRefs<S>& out) {
        for (auto& b : blocks) b.collect_buffers(out);
    }
    void set_bn_updates(bool v) {
        for (auto& b : blocks) b.set_bn_updates(v);
    }
};

// Style reconstruction module: FC -> ReLU -> FC emitting the AdaIN scale and
// bias for one decoder block. The scale half of the output bias starts at 1.
template <typename S>
struct Srm {
    nn::Linear<S> fc1, fc2;
    int channels = 0;

    Srm() = default;
    Srm(const std::string& name, int z, int block_channels, int hidden, Rng& rng)
        : channels(block_channels) {
        fc1 = nn::Linear<S>(name + ".fc1", z, hidden, rng);
        fc2 = nn::Linear<S>(name + ".fc2", hidden, 2 * block_channels, rng);
        for (int c = 0; c < block_channels; ++c) fc2.bias.var.value()[c] = S(1);
    }

    // style:(N,Z) -> scale (N,C), bias (N,C)
    std::pair<Var<S>, Var<S>> forward(Var<S> style) const {
        Var<S> h = fc2.forward(nn::relu(fc1.forward(style)));
        return {nn::slice_cols(h, 0, channels), nn::slice_cols(h, channels, channels)};
    }

    void collect(nn::ParamRefs<S>& out) {
        fc1.collect(out);
        fc2.collect(out);
    }
};

// Reconstruction decoder: four conv blocks over the anatomical representation;
// the first three are followed by AdaIN conditioned on the style code through
// dedicated SRMs, the last maps to image channels with a sigmoid.
template <typename S>
struct Decoder {
    std::vector<nn::Conv2d<S>> convs;
    std::vector<Srm<S>> srms;
    S slope = S(0.2);
    S adain_eps = S(1e-8);

    Decoder() = default;
    Decoder(const ModelConfig& cfg, Rng& rng)
        : slope(static_cast<S>(cfg.leaky_slope)), adain_eps(static_cast<S>(cfg.adain_eps)) {
        const auto& dch = cfg.decoder_channels;
        int cin = cfg.T;
        for (int b = 0; b < 3; ++b) {
            convs.emplace_back("d_rec.conv" + std::to_string(b), cin, dch[b], 3, 1, 1, rng,
                               static_cast<S>(cfg.leaky_slope));
            srms.emplace_back("d_rec.srm" + std::to_string(b), cfg.Z, dch[b],
                              cfg.srm_hidden(dch[b]), rng);
            cin = dch[b];
        }
        convs.emplace_back("d_rec.conv3", cin, cfg.image_channels, 3, 1, 1, rng,
                           static_cast<S>(cfg.leaky_slope));
    }

    // style:(N,Z), anatomy:(N,T,H,W) -> image (N,Co,H,W) in [0,1]
    Var<S> forward(Var<S> style, Var<S> anatomy) const {
        Var<S> h = anatomy;
        for (int b = 0; b < 3; ++b) {
            h = convs[static_cast<std::size_t>(b)].forward(h);
            auto [gamma, beta] = srms[static_cast<std::size_t>(b)].forward(style);
            h = nn::adain(h, gamma, beta, adain_eps);
            h = nn::leaky_relu(h, slope);
        }
        return nn::sigmoid_op(convs[3].forward(h));
    }

    void collect(nn::ParamRefs<S>& out) {
        for (auto& c : convs) c.collect(out);
        for (auto& s : srms) s.collect(out);
    }
};

// Two-block segmentor fed exclusively by the anatomical representation.
template <typename S>
struct Segmentor {
    ConvBnLrelu<S> block;
    nn::Conv2d<S> proj;

    Segmentor() = default;
    Segmentor(const ModelConfig& cfg, Rng& rng)
        : block("seg.block", cfg.T, cfg.seg_hidden, 3, 1, 1, static_cast<S>(cfg.leaky_slope), rng),
          proj("seg.proj", cfg.seg_hidden, cfg.K, 1, 1, 0, rng,
               static_cast<S>(cfg.leaky_slope)) {}

    Var<S> forward(Var<S> anatomy, bool training) {
        return nn::softmax_channels(proj.forward(block.forward(anatomy, training)));
    }

    void collect(nn::ParamRefs<S>& out) {
        block.collect(out);
        proj.collect(out);
    }
    void collect_buffers(nn::BufferRefs<S>& out) { block.collect_buffers(out); }
    void set_bn_updates(bool v) { block.set_bn_updates(v); }
};

template <typename S>
struct CddsaModel {
    ModelConfig config;
    AnatomyEncoder<S> e_ana;
    StyleEncoder<S> e_sty;
    Decoder<S> d_rec;
    Segmentor<S> seg;

    CddsaModel() = default;
    CddsaModel(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
        config.validate();
        Rng rng(Rng::derive(seed, 0xA11, 0));
        e_ana = AnatomyEncoder<S>(config, rng);
        e_sty = StyleEncoder<S>(config, rng);
        d_rec = Decoder<S>(config, rng);
        seg = Segmentor<S>(config, rng);
    }

    nn::ParamRefs<S> params() {
        nn::ParamRefs<S> out;
        e_ana.collect(out);
        e_sty.collect(out);
        d_rec.collect(out);
        seg.collect(out);
        return out;
    }
    nn::BufferRefs<S> buffers() {
        nn::BufferRefs<S> out;
        e_ana.collect_buffers(out);
        e_sty.collect_buffers(out);
        seg.collect_buffers(out);
        return out;
    }

    // Auxiliary forwards (the style-augmented pass) normalize with batch
    // statistics but should not contaminate the inference-time running
    // estimates with synthetic-image statistics.
    void set_bn_stat_updates(bool v) {
        e_ana.set_bn_updates(v);
        e_sty.set_bn_updates(v);
        seg.set_bn_updates(v);
    }

    // ---- graph-building forwards (batched) ----

    Var<S> anatomy_logits(Var<S> images, bool training) { return e_ana.forward(images, training); }

    Var<S> encode_anatomy_g(Var<S> images, bool training, Rng* rng) {
        return anatomy_activation(anatomy_logits(images, training), config.activation,
                                  static_cast<S>(config.gumbel_tau), rng, training);
    }

    std::pair<Var<S>, Var<S>> encode_style_g(Var<S> images, bool training) {
        return e_sty.forward(images, training);
    }

    Var<S> sample_style_g(Var<S> u, Var<S> v, SampleMode mode, Rng* rng) {
        if (mode == SampleMode::mean) return u;
        Array<S> eps(u.shape());
        if (rng)
            for (long i = 0; i < eps.numel(); ++i) eps[i] = static_cast<S>(rng->gaussian());
        return nn::add(u, nn::mul(nn::sqrt_op(v), Var<S>::constant(std::move(eps))));
    }

    Var<S> decode_g(Var<S> style, Var<S> anatomy) { return d_rec.forward(style, anatomy); }

    Var<S> segment_g(Var<S> anatomy, bool training) { return seg.forward(anatomy, training); }

    // ---- plain-typed single-image API (deterministic evaluation mode) ----

    AnatomicalRepresentation<S> encode_anatomy(const Array<S>& image) {
        Var<S> x = Var<S>::constant(batch_of_one(image));
        Var<S> out = encode_anatomy_g(x, /*training=*/false, nullptr);
        return {strip_batch(out.value()), config.activation};
    }

    StyleDistribution<S> encode_style(const Array<S>& image) {
        Var<S> x = Var<S>::constant(batch_of_one(image));
        auto [u, v] = encode_style_g(x, /*training=*/false);
        return {u.value().data, v.value().data};
    }

    Array<S> decode(const StyleCode<S>& style, const AnatomicalRepresentation<S>& anatomy) {
        if (static_cast<int>(style.z.size()) != config.Z)
            throw ShapeError("decode: style code length != Z");
        Var<S> z = Var<S>::constant(Array<S>(Shape{1, config.Z}, std::vector<S>(style.z)));
        Var<S> fa = Var<S>::constant(batch_of_one(anatomy.tensor));
        return strip_batch(decode_g(z, fa).value());
    }

    Array<S> segment(const AnatomicalRepresentation<S>& anatomy) {
        Var<S> fa = Var<S>::constant(batch_of_one(anatomy.tensor));
        return strip_batch(segment_g(fa, /*training=*/false).value());
    }

    // (scale, bias) emitted by SRM `block_index` for a single style code.
    std::pair<std::vector<S>, std::vector<S>> srm_params(const StyleCode<S>& style,
                                                         int block_index) {
        if (block_index < 0 || block_index >= 3)
            throw ConfigError("srm_params: block_index must be in {0,1,2}");
        Var<S> z = Var<S>::constant(Array<S>(Shape{1, config.Z}, std::vector<S>(style.z)));
        auto [g, b] = d_rec.srms[static_cast<std::size_t>(block_index)].forward(z);
        return {g.value().data, b.value().data};
    }

    static Array<S> batch_of_one(const Array<S>& chw) {
        if (chw.ndim() != 3) throw ShapeError("expected a (C,H,W) tensor");
        Array<S> out(Shape{1, chw.shape[0], chw.shape[1], chw.shape[2]}, chw.data);
        return out;
    }
    static Array<S> strip_batch(const Array<S>& nchw) {
        if (nchw.ndim() != 4 || nchw.shape[0] != 1)
            throw ShapeError("expected a single-sample batch");
        return Array<S>(Shape{nchw.shape[1], nchw.shape[2], nchw.shape[3]}, nchw.data);
    }
};

// Plain-typed style sampling used at evaluation time and in tests.
template <typename S>
StyleCode<S> sample_style(const StyleDistribution<S>& dist, SampleMode mode, Rng* rng) {
    if (dist.mean.size() != dist.variance.size())
        throw ShapeError("sample_style: mean/variance length mismatch");
    StyleCode<S> code;
    code.z = dist.mean;
    if (mode == SampleMode::mean) {
        code.provenance = StyleProvenance::mean;
        return code;
    }
    for (std::size_t i = 0; i < code.z.size(); ++i) {
        if (dist.variance[i] <= S(0)) throw DataError("sample_style: non-positive variance");
        const S eps = rng ? static_cast<S>(rng->gaussian()) : S(0);
        code.z[i] += std::sqrt(dist.variance[i]) * eps;
    }
    code.provenance = StyleProvenance::sampled;
    return code;
}

}  // namespace cddsa::model
