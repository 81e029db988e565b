#pragma once

#include <array>
#include <vector>

#include "lidet/backbone.hpp"
#include "lidet/detection.hpp"
#include "lidet/nn.hpp"

namespace lidet {

struct TransformerConfig {
    int d = 64;
    int heads = 8;
    int levels = 4;
    int points = 4; // sampling points per head and level
    int enc_layers = 2;
    int dec_layers = 6;
    int num_queries = 900;
    int num_classes = 3;
    int ffn_hidden = 128;

    void validate() const;
};

// Sinusoidal encoding of normalized 3D points: d/6 frequencies per
// coordinate (sin and cos), zero-padded up to d.
Tensor positional_encoding(const Tensor& pts, int d);

// ------------------------------------------------------------- attention --

struct MsDeformAttnWeights {
    Linear value_proj;  // d -> d
    Linear offset_head; // d -> heads*levels*points*2
    Linear attn_head;   // d -> heads*levels*points
    Linear out_proj;    // d -> d

    static MsDeformAttnWeights create(ParamStore& ps, const std::string& prefix, int d, int heads,
                                      int levels, int points, Rng& rng);
};

struct MsAttnResult {
    Tensor out;  // [Lq, d]
    Tensor attn; // [Lq, heads, L, K] softmax-normalized per (query, head)
};

// Deformable attention for a batch of queries with per-query normalized
// reference points; value maps are sampled around the projected reference
// at learned offsets. refs are treated as constants (encoder pixels).
MsAttnResult ms_deformable_attention(const Tensor& queries, const Tensor& refs_norm,
                                     const std::vector<Tensor>& value_maps,
                                     const MsDeformAttnWeights& w, int heads, int points);

struct EncoderLayerWeights {
    MsDeformAttnWeights attn;
    Linear ffn1, ffn2;
};

struct EncoderWeights {
    Tensor level_embed; // [levels, d]
    std::vector<EncoderLayerWeights> layers;

    static EncoderWeights create(ParamStore& ps, const std::string& prefix,
                                 const TransformerConfig& cfg, Rng& rng);
};

// Deformable self-attention encoder; every pyramid pixel is a query whose
// reference point is its own normalized coordinate. Output shapes equal
// input shapes.
FeaturePyramid encode(const FeaturePyramid& pyramid, const TransformerConfig& cfg,
                      const EncoderWeights& w);

// --------------------------------------------------------------- decoder --

struct SelfAttnWeights {
    Linear q_proj, k_proj, v_proj, o_proj;

    static SelfAttnWeights create(ParamStore& ps, const std::string& prefix, int d, Rng& rng);
};

// Standard multi-head self-attention block (pre-residual output).
Tensor multi_head_self_attention(const Tensor& x, const SelfAttnWeights& w, int heads);

struct DecoderLayerWeights {
    SelfAttnWeights self_attn;
    Linear samp_weights; // d -> 4 per-level scalars
    Linear ffn1, ffn2;
    Linear reg_head; // d -> 10: dxyz(3), log size(3), sin/cos(2), vel(2)
    Linear cls_head; // d -> num_classes
};

struct DecoderWeights {
    Tensor query_embed; // [N_q, d]
    Linear ref_head;    // d -> 3
    std::vector<DecoderLayerWeights> layers;

    static DecoderWeights create(ParamStore& ps, const std::string& prefix,
                                 const TransformerConfig& cfg, Rng& rng);
};

struct LayerPrediction {
    Tensor center;     // [N_q, 3] normalized, pre-clamp (ref + offset)
    Tensor size_log;   // [N_q, 3]
    Tensor rot;        // [N_q, 2] raw (sin, cos)
    Tensor vel;        // [N_q, 2]
    Tensor cls_logits; // [N_q, K]
};

struct DecodeResult {
    std::vector<LayerPrediction> layers;
    std::vector<Tensor> refs; // reference points entering each layer
};

// r = sigmoid(ref_head(q)) in (0,1)^3.
Tensor init_reference_points(const Tensor& queries, const Linear& ref_head);

// Per-query scale-gated sum of bilinear samples at the projected reference
// point over the four pyramid levels, then q + feature + PE(ref) and norm.
// Only (x,y) of the reference participates in BEV sampling.
Tensor bev_cross_attention(const Tensor& queries, const Tensor& refs, const FeaturePyramid& pyramid,
                           const Linear& samp_weights);

struct DecoderLayerOut {
    Tensor queries;
    Tensor next_refs;
    LayerPrediction pred;
};

DecoderLayerOut decoder_layer(const Tensor& queries, const Tensor& refs,
                              const FeaturePyramid& pyramid, const DecoderLayerWeights& w,
                              const TransformerConfig& cfg);

DecodeResult decode(const FeaturePyramid& pyramid, const TransformerConfig& cfg,
                    const DecoderWeights& w);

// Decode one query row of a layer prediction into an absolute box.
Box3D decode_box(const LayerPrediction& pred, int query, const std::array<double, 6>& range);

// k highest-scoring boxes (score = max class sigmoid), stable tie-break by
// query index; k is capped at N_q. No NMS.
DetectionSet select_top_k(const LayerPrediction& final, int k, const std::array<double, 6>& range);

} // namespace lidet
