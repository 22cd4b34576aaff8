#include "rdsal/model.hpp"

#include "rdsal/util.hpp"

namespace rdsal {

ModelConfig ModelConfig::toy() {
    ModelConfig c;
    c.image_size = 64;
    c.stage_channels = {8, 16, 16, 16, 16};
    c.decoder_channels = 16;
    c.fusion_channels = 8;
    c.edge_channels = 8;
    c.edge_feature_channels = 16;
    c.attention = {8, 8, 7};
    c.discriminator.conv_channels = {3, 16, 24, 24, 24, 24};
    c.discriminator.fc_hidden = 64;
    return c;
}

ModelConfig ModelConfig::paper() {
    ModelConfig c;
    c.image_size = 224;
    c.stage_channels = {64, 128, 256, 512, 512};
    c.decoder_channels = 64;
    c.fusion_channels = 64;
    c.edge_channels = 16;
    c.edge_feature_channels = 64;
    c.attention = {32, 64, 7};
    c.discriminator.conv_channels = {3, 32, 64, 64, 64, 64};
    c.discriminator.fc_hidden = 100;
    return c;
}

void ModelConfig::validate() const {
    if (image_size < 16 || image_size % 8 != 0)
        throw ConfigError("model.image_size must be a multiple of 8 and at least 16, got " +
                          std::to_string(image_size));
    for (auto ch : stage_channels)
        if (ch < 1) throw ConfigError("model.stage_channels entries must be positive");
    if (decoder_channels < 1 || fusion_channels < 1 || edge_channels < 1 ||
        edge_feature_channels < 1)
        throw ConfigError("model channel widths must be positive");
    if (attention.hidden < 1 || attention.ctx_channels < 1)
        throw ConfigError("model.attention widths must be positive");
    if (attention.window < 1 || attention.window % 2 == 0)
        throw ConfigError("model.attention.window must be odd and positive");
    for (auto ch : discriminator.conv_channels)
        if (ch < 1) throw ConfigError("model.discriminator.conv_channels must be positive");
    if (discriminator.fc_hidden < 1) throw ConfigError("model.discriminator.fc_hidden must be positive");
}

std::int64_t ModelConfig::stage_size(int i) const {
    switch (i) {
        case 0: return image_size / 2;
        case 1: return image_size / 4;
        default: return image_size / 8;
    }
}

std::int64_t ModelConfig::decode_size(int i) const {
    // decoder stage i consumes encoder stage 4-i
    return stage_size(4 - i);
}

// ------------------------------------------------------------------- weights

template <typename T>
void StreamWeights<T>::init(const ModelConfig& cfg, Rng& rng) {
    std::int64_t in_ch = 3;
    for (int i = 0; i < 5; ++i) {
        enc[i].block1.init(in_ch, cfg.stage_channels[i], rng, ModelConfig::stage_strides[i],
                           ModelConfig::stage_dilations[i]);
        enc[i].block2.init(cfg.stage_channels[i], cfg.stage_channels[i], rng, 1,
                           ModelConfig::stage_dilations[i]);
        in_ch = cfg.stage_channels[i];
    }
    const std::int64_t dch = cfg.decoder_channels;
    for (int i = 0; i < 5; ++i) {
        const std::int64_t skip_ch = cfg.stage_channels[4 - i];
        const std::int64_t fuse_in = (i == 0) ? skip_ch : skip_ch + dch;
        dec[i].fuse.init(dch, fuse_in, 3, rng);
        dec[i].fuse.pad = 1;
        dec[i].global_attention = (i < 2);
        if (dec[i].global_attention) {
            const std::int64_t s = cfg.decode_size(i);
            dec[i].gatt.init(dch, cfg.attention.hidden, s, s, rng);
        } else {
            dec[i].latt.init(dch, cfg.attention.ctx_channels, cfg.attention.window, rng);
        }
        dec[i].side.init(1, dch, 1, rng, true, 1.0);
    }
}

template <typename T>
void StreamWeights<T>::collect(const std::string& prefix, ParamSet<T>& ps) {
    for (int i = 0; i < 5; ++i) {
        const std::string sp = prefix + ".enc" + std::to_string(i + 1);
        enc[i].block1.collect(sp + ".block1", ps);
        enc[i].block2.collect(sp + ".block2", ps);
    }
    for (int i = 0; i < 5; ++i) {
        const std::string sp = prefix + ".dec" + std::to_string(i + 1);
        dec[i].fuse.collect(sp + ".fuse", ps);
        if (dec[i].global_attention)
            dec[i].gatt.collect(sp + ".gatt", ps);
        else
            dec[i].latt.collect(sp + ".latt", ps);
        dec[i].side.collect(sp + ".side", ps);
    }
}

template <typename T>
void FusionHead<T>::init(std::int64_t in_ch, const ModelConfig& cfg, Rng& rng) {
    conv.init(cfg.fusion_channels, in_ch, 3, rng);
    conv.pad = 1;
    out.init(1, cfg.fusion_channels, 1, rng, true, 1.0);
}

template <typename T>
void FusionHead<T>::collect(const std::string& prefix, ParamSet<T>& ps) {
    conv.collect(prefix + ".conv", ps);
    out.collect(prefix + ".out", ps);
}

template <typename T>
void EdgeBranch<T>::init(const ModelConfig& cfg, Rng& rng) {
    for (int i = 0; i < 3; ++i) blocks[i].init(cfg.stage_channels[i], cfg.edge_channels, rng);
    merge.init(cfg.edge_feature_channels, 3 * cfg.edge_channels, 1, rng);
    head.init(1, cfg.edge_feature_channels, 1, rng, true, 1.0);
}

template <typename T>
void EdgeBranch<T>::collect(const std::string& prefix, ParamSet<T>& ps) {
    for (int i = 0; i < 3; ++i) blocks[i].collect(prefix + ".block" + std::to_string(i + 1), ps);
    merge.collect(prefix + ".merge", ps);
    head.collect(prefix + ".head", ps);
}

template <typename T>
void GeneratorWeights<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(mix_seeds(seed, 0x67656e));
    rgb.init(cfg, rng);
    depth.init(cfg, rng);
    // Identical starting point for both streams.
    ParamSet<T> pr, pd;
    rgb.collect("rgb", pr);
    depth.collect("depth", pd);
    for (std::size_t i = 0; i < pr.size(); ++i) {
        auto src = pr.items()[i].second.data();
        auto dst = pd.items()[i].second.data();
        for (std::size_t j = 0; j < src.size(); ++j) dst[j] = src[j];
    }
    fuse_plain.init(2 * cfg.decoder_channels, cfg, rng);
    edge.init(cfg, rng);
    fuse_edge.init(2 * cfg.decoder_channels + cfg.edge_feature_channels, cfg, rng);
}

template <typename T>
ParamSet<T> GeneratorWeights<T>::params_main() {
    ParamSet<T> ps;
    rgb.collect("rgb", ps);
    depth.collect("depth", ps);
    fuse_plain.collect("fuse", ps);
    return ps;
}

template <typename T>
ParamSet<T> GeneratorWeights<T>::params_edge() {
    ParamSet<T> ps;
    edge.collect("edge", ps);
    fuse_edge.collect("fuse_edge", ps);
    return ps;
}

template <typename T>
ParamSet<T> GeneratorWeights<T>::params_all() {
    ParamSet<T> ps;
    rgb.collect("rgb", ps);
    depth.collect("depth", ps);
    fuse_plain.collect("fuse", ps);
    edge.collect("edge", ps);
    fuse_edge.collect("fuse_edge", ps);
    return ps;
}

template <typename T>
void DiscriminatorWeights<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(mix_seeds(seed, 0x64697363));
    const auto& ch = cfg.discriminator.conv_channels;
    convs[0].init(ch[0], 4, 1, rng);  // rgb + saliency
    std::int64_t prev = ch[0];
    for (int i = 1; i < 6; ++i) {
        convs[i].init(ch[i], prev, 3, rng);
        convs[i].pad = 1;
        prev = ch[i];
    }
    const std::int64_t s8 = cfg.image_size / 8;
    fc1.init(ch[5] * s8 * s8, cfg.discriminator.fc_hidden, rng);
    fc2.init(cfg.discriminator.fc_hidden, 2, rng);
    fc3.init(2, 1, rng);
}

template <typename T>
ParamSet<T> DiscriminatorWeights<T>::params() {
    ParamSet<T> ps;
    for (int i = 0; i < 6; ++i) convs[i].collect("disc.conv" + std::to_string(i + 1), ps);
    fc1.collect("disc.fc7", ps);
    fc2.collect("disc.fc8", ps);
    fc3.collect("disc.fc9", ps);
    return ps;
}

// ------------------------------------------------------------------ forwards

template <typename T>
EncoderOut<T> encode(const Tensor<T>& x, const StreamWeights<T>& sw, const ModelConfig& cfg) {
    if (x.rank() != 4 || x.size(1) != 3 || x.size(2) != cfg.image_size ||
        x.size(3) != cfg.image_size)
        throw ShapeError("encode: expected (N,3," + std::to_string(cfg.image_size) + "," +
                         std::to_string(cfg.image_size) + "), got " + shape_str(x.shape()));
    EncoderOut<T> out;
    Tensor<T> cur = x;
    for (int i = 0; i < 5; ++i) {
        cur = sw.enc[i].block2(sw.enc[i].block1(cur));
        out.stages[i] = cur;
    }
    return out;
}

template <typename T>
DecoderOut<T> decode(const EncoderOut<T>& enc, const StreamWeights<T>& sw, const ModelConfig& cfg,
                     bool use_attention) {
    DecoderOut<T> out;
    Tensor<T> prev;
    for (int i = 0; i < 5; ++i) {
        const Tensor<T>& skip = enc.stages[4 - i];
        Tensor<T> x;
        if (i == 0) {
            x = skip;
        } else {
            Tensor<T> up = prev;
            if (cfg.decode_size(i) != cfg.decode_size(i - 1))
                up = bilinear_resize(prev, cfg.decode_size(i), cfg.decode_size(i));
            x = concat<T>({skip, up}, 1);
        }
        Tensor<T> y = relu(sw.dec[i].fuse(x));
        if (use_attention)
            y = sw.dec[i].global_attention ? sw.dec[i].gatt(y) : sw.dec[i].latt(y);
        out.stages[i] = y;
        prev = y;
    }
    return out;
}

template <typename T>
std::array<Tensor<T>, 5> side_maps(const DecoderOut<T>& dec, const StreamWeights<T>& sw) {
    std::array<Tensor<T>, 5> maps;
    for (int i = 0; i < 5; ++i) maps[i] = sigmoid(sw.dec[i].side(dec.stages[i]));
    return maps;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> edge_forward(const EncoderOut<T>& enc, const EdgeBranch<T>& eb,
                                             const ModelConfig& cfg) {
    const std::int64_t half = cfg.image_size / 2;
    std::array<Tensor<T>, 3> feats;
    for (int i = 0; i < 3; ++i) {
        Tensor<T> f = eb.blocks[i](enc.stages[i]);
        if (f.size(2) != half) f = bilinear_resize(f, half, half);
        feats[i] = f;
    }
    Tensor<T> merged = relu(eb.merge(concat<T>({feats[0], feats[1], feats[2]}, 1)));
    Tensor<T> map = bilinear_resize(sigmoid(eb.head(merged)), cfg.image_size, cfg.image_size);
    return {merged, map};
}

template <typename T>
Tensor<T> fuse_predict(const Tensor<T>& dec5_rgb, const Tensor<T>& dec5_depth,
                       const Tensor<T>& edge_feat, const FusionHead<T>& head,
                       const ModelConfig& cfg) {
    Tensor<T> x;
    if (edge_feat.defined())
        x = concat<T>({dec5_rgb, dec5_depth, edge_feat}, 1);
    else
        x = concat<T>({dec5_rgb, dec5_depth}, 1);
    Tensor<T> y = sigmoid(head.out(relu(head.conv(x))));
    return bilinear_resize(y, cfg.image_size, cfg.image_size);
}

template <typename T>
Tensor<T> discriminate(const Tensor<T>& rgb, const Tensor<T>& saliency,
                       const DiscriminatorWeights<T>& dw, const ModelConfig& cfg) {
    (void)cfg;  // geometry is derived from the inputs
    if (rgb.rank() != 4 || rgb.size(1) != 3)
        throw ShapeError("discriminate: rgb must be (N,3,S,S), got " + shape_str(rgb.shape()));
    if (saliency.rank() != 4 || saliency.size(1) != 1 || saliency.size(0) != rgb.size(0) ||
        saliency.size(2) != rgb.size(2) || saliency.size(3) != rgb.size(3))
        throw ShapeError("discriminate: saliency must be (N,1,S,S) matching rgb, got " +
                         shape_str(saliency.shape()));
    Tensor<T> x = concat<T>({rgb, saliency}, 1);
    x = relu(dw.convs[0](x));
    x = relu(dw.convs[1](x));
    x = max_pool2d(x, 2, 2);
    x = relu(dw.convs[2](x));
    x = relu(dw.convs[3](x));
    x = max_pool2d(x, 2, 2);
    x = relu(dw.convs[4](x));
    x = relu(dw.convs[5](x));
    x = max_pool2d(x, 2, 2);
    const std::int64_t N = x.size(0);
    x = reshape(x, {N, x.numel() / N});
    x = tanh_act(dw.fc1(x));
    x = tanh_act(dw.fc2(x));
    return sigmoid(dw.fc3(x));
}

template <typename T>
ForwardResult<T> forward_full(const Tensor<T>& rgb, const Tensor<T>& depth,
                              GeneratorWeights<T>& gw, const ModelConfig& cfg, ForwardFlags flags) {
    if (depth.rank() != 4 || depth.size(1) != 1)
        throw ShapeError("forward_full: depth must be (N,1,S,S), got " + shape_str(depth.shape()));
    if (flags.use_edge && flags.stream != StreamMode::Both)
        throw ConfigError("the edge-aware fusion head needs both streams");

    ForwardResult<T> res;
    const std::int64_t S = cfg.image_size;
    const bool want_rgb = flags.stream != StreamMode::DepthOnly;
    const bool want_depth = flags.stream != StreamMode::RgbOnly;

    EncoderOut<T> enc_r;
    Tensor<T> dec5_r, dec5_d;
    if (want_rgb) {
        enc_r = encode(rgb, gw.rgb, cfg);
        DecoderOut<T> dec = decode(enc_r, gw.rgb, cfg, flags.use_attention);
        res.side_rgb = side_maps(dec, gw.rgb);
        res.s_r = bilinear_resize(res.side_rgb[4], S, S);
        dec5_r = dec.stages[4];
    }
    if (want_depth) {
        Tensor<T> depth3 = concat<T>({depth, depth, depth}, 1);
        EncoderOut<T> enc = encode(depth3, gw.depth, cfg);
        DecoderOut<T> dec = decode(enc, gw.depth, cfg, flags.use_attention);
        res.side_depth = side_maps(dec, gw.depth);
        res.s_d = bilinear_resize(res.side_depth[4], S, S);
        dec5_d = dec.stages[4];
    }

    if (flags.stream == StreamMode::Both) {
        if (flags.use_edge) {
            auto [feat, map] = edge_forward(enc_r, gw.edge, cfg);
            res.edge_feat = feat;
            res.edge_map = map;
            res.s_fused = fuse_predict(dec5_r, dec5_d, feat, gw.fuse_edge, cfg);
        } else {
            res.s_fused = fuse_predict(dec5_r, dec5_d, Tensor<T>(), gw.fuse_plain, cfg);
        }
    } else {
        res.s_fused = want_rgb ? res.s_r : res.s_d;
    }
    return res;
}

#define RDSAL_INSTANTIATE_MODEL(T)                                                                \
    template struct StreamWeights<T>;                                                             \
    template struct FusionHead<T>;                                                                \
    template struct EdgeBranch<T>;                                                                \
    template struct GeneratorWeights<T>;                                                          \
    template struct DiscriminatorWeights<T>;                                                      \
    template EncoderOut<T> encode<T>(const Tensor<T>&, const StreamWeights<T>&,                   \
                                     const ModelConfig&);                                         \
    template DecoderOut<T> decode<T>(const EncoderOut<T>&, const StreamWeights<T>&,               \
                                     const ModelConfig&, bool);                                   \
    template std::array<Tensor<T>, 5> side_maps<T>(const DecoderOut<T>&, const StreamWeights<T>&);\
    template std::pair<Tensor<T>, Tensor<T>> edge_forward<T>(const EncoderOut<T>&,                \
                                                             const EdgeBranch<T>&,                \
                                                             const ModelConfig&);                 \
    template Tensor<T> fuse_predict<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                       const FusionHead<T>&, const ModelConfig&);                 \
    template Tensor<T> discriminate<T>(const Tensor<T>&, const Tensor<T>&,                        \
                                       const DiscriminatorWeights<T>&, const ModelConfig&);       \
    template ForwardResult<T> forward_full<T>(const Tensor<T>&, const Tensor<T>&,                 \
                                              GeneratorWeights<T>&, const ModelConfig&,           \
                                              ForwardFlags);

RDSAL_INSTANTIATE_MODEL(float)
RDSAL_INSTANTIATE_MODEL(double)

#undef RDSAL_INSTANTIATE_MODEL

}  // namespace rdsal
