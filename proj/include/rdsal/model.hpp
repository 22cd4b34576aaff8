#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "rdsal/layers.hpp"

namespace rdsal {

enum class ScalePreset { Toy, Paper };
enum class StreamMode { Both, RgbOnly, DepthOnly };

struct AttentionSettings {
    std::int64_t hidden = 8;        // LSTM state size per direction
    std::int64_t ctx_channels = 8;  // context conv width for local attention
    std::int64_t window = 7;        // local attention window (odd)
};

struct DiscriminatorConfig {
    // Output channels of conv1..conv6. conv1 is 1x1, the rest 3x3 pad 1;
    // 2x2/s2 max pools sit after conv2, conv4 and conv6.
    std::array<std::int64_t, 6> conv_channels{3, 32, 64, 64, 64, 64};
    std::int64_t fc_hidden = 100;
};

struct ModelConfig {
    std::int64_t image_size = 64;
    // Encoder stage widths; strides {2,2,2,1,1} and dilations {1,1,1,2,4}
    // are architectural constants, giving resolutions S/2,S/4,S/8,S/8,S/8.
    std::array<std::int64_t, 5> stage_channels{8, 16, 16, 16, 16};
    std::int64_t decoder_channels = 16;
    std::int64_t fusion_channels = 8;
    std::int64_t edge_channels = 16;          // per-stage edge residual width
    std::int64_t edge_feature_channels = 64;  // merged edge feature width
    AttentionSettings attention;
    DiscriminatorConfig discriminator;

    static constexpr std::array<std::int64_t, 5> stage_strides{2, 2, 2, 1, 1};
    static constexpr std::array<std::int64_t, 5> stage_dilations{1, 1, 1, 2, 4};

    static ModelConfig toy();
    static ModelConfig paper();
    void validate() const;

    // Spatial size of encoder stage i (0-based): S/2, S/4 then S/8.
    std::int64_t stage_size(int i) const;
    // Spatial size of decoder stage i (deep-to-shallow): S/8,S/8,S/8,S/4,S/2.
    std::int64_t decode_size(int i) const;
};

template <typename T>
struct EncoderStage {
    ResidualBlock<T> block1, block2;
};

template <typename T>
struct DecoderStage {
    Conv2dLayer<T> fuse;      // 3x3 pad 1 over concat(skip, upsampled previous)
    GlobalAttention<T> gatt;  // stages 0-1 (deepest)
    LocalAttention<T> latt;   // stages 2-4
    Conv2dLayer<T> side;      // 1x1 -> 1, sigmoid applied in side_maps
    bool global_attention = false;
};

template <typename T>
struct StreamWeights {
    std::array<EncoderStage<T>, 5> enc;
    std::array<DecoderStage<T>, 5> dec;

    void init(const ModelConfig& cfg, Rng& rng);
    void collect(const std::string& prefix, ParamSet<T>& ps);
};

template <typename T>
struct FusionHead {
    Conv2dLayer<T> conv;  // 3x3 pad 1 -> fusion_channels
    Conv2dLayer<T> out;   // 1x1 -> 1

    void init(std::int64_t in_ch, const ModelConfig& cfg, Rng& rng);
    void collect(const std::string& prefix, ParamSet<T>& ps);
};

template <typename T>
struct EdgeBranch {
    std::array<ResidualBlock<T>, 3> blocks;  // one per shallow encoder stage
    Conv2dLayer<T> merge;                    // 1x1: 3*edge_ch -> edge_feature_channels
    Conv2dLayer<T> head;                     // 1x1: edge_feature_channels -> 1

    void init(const ModelConfig& cfg, Rng& rng);
    void collect(const std::string& prefix, ParamSet<T>& ps);
};

template <typename T>
struct GeneratorWeights {
    StreamWeights<T> rgb, depth;
    FusionHead<T> fuse_plain;  // input: 2*decoder_channels
    EdgeBranch<T> edge;
    FusionHead<T> fuse_edge;   // input: 2*decoder_channels + edge_feature_channels

    // Both streams start from identical weights and diverge during training.
    void init(const ModelConfig& cfg, std::uint64_t seed);
    // Parameter groups: "main" is what the saliency phase trains, "edge" is
    // what the edge finetune phase trains.
    ParamSet<T> params_main();
    ParamSet<T> params_edge();
    ParamSet<T> params_all();
};

template <typename T>
struct DiscriminatorWeights {
    std::array<Conv2dLayer<T>, 6> convs;
    LinearLayer<T> fc1, fc2, fc3;

    void init(const ModelConfig& cfg, std::uint64_t seed);
    ParamSet<T> params();
};

struct ForwardFlags {
    StreamMode stream = StreamMode::Both;
    bool use_attention = true;
    bool use_edge = false;
};

template <typename T>
struct EncoderOut {
    std::array<Tensor<T>, 5> stages;
};

template <typename T>
struct DecoderOut {
    std::array<Tensor<T>, 5> stages;  // deep-to-shallow
};

template <typename T>
struct ForwardResult {
    std::array<Tensor<T>, 5> side_rgb;    // native-resolution sigmoid maps
    std::array<Tensor<T>, 5> side_depth;
    Tensor<T> s_r, s_d;    // full-resolution stream maps
    Tensor<T> s_fused;     // full-resolution fused map
    Tensor<T> edge_feat;   // (N, edge_feature_channels, S/2, S/2) when use_edge
    Tensor<T> edge_map;    // (N, 1, S, S) when use_edge
};

template <typename T>
EncoderOut<T> encode(const Tensor<T>& x, const StreamWeights<T>& sw, const ModelConfig& cfg);

template <typename T>
DecoderOut<T> decode(const EncoderOut<T>& enc, const StreamWeights<T>& sw, const ModelConfig& cfg,
                     bool use_attention);

template <typename T>
std::array<Tensor<T>, 5> side_maps(const DecoderOut<T>& dec, const StreamWeights<T>& sw);

// (edge features at S/2, edge map at S)
template <typename T>
std::pair<Tensor<T>, Tensor<T>> edge_forward(const EncoderOut<T>& enc, const EdgeBranch<T>& eb,
                                             const ModelConfig& cfg);

template <typename T>
Tensor<T> fuse_predict(const Tensor<T>& dec5_rgb, const Tensor<T>& dec5_depth,
                       const Tensor<T>& edge_feat, const FusionHead<T>& head,
                       const ModelConfig& cfg);

// rgb (N,3,S,S), saliency (N,1,S,S) -> (N,1) probabilities, strictly in (0,1).
template <typename T>
Tensor<T> discriminate(const Tensor<T>& rgb, const Tensor<T>& saliency,
                       const DiscriminatorWeights<T>& dw, const ModelConfig& cfg);

// depth is (N,1,S,S); it is replicated to three channels inside.
template <typename T>
ForwardResult<T> forward_full(const Tensor<T>& rgb, const Tensor<T>& depth,
                              GeneratorWeights<T>& gw, const ModelConfig& cfg, ForwardFlags flags);

}  // namespace rdsal
