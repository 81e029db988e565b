#include "lidet/transformer.hpp"

#include <algorithm>
#include <cmath>

#include "lidet/error.hpp"

namespace lidet {

void TransformerConfig::validate() const {
    if (d <= 0 || heads <= 0 || d % heads != 0) {
        throw ConfigError("transformer: model dim " + std::to_string(d) +
                          " must be divisible by heads " + std::to_string(heads));
    }
    if (levels != 4) throw ConfigError("transformer: pyramid level count must be 4");
    if (points < 1 || enc_layers < 0 || dec_layers < 1 || num_queries < 1 || num_classes < 1) {
        throw ConfigError("transformer: invalid layer/query/class counts");
    }
}

Tensor positional_encoding(const Tensor& pts, int d) {
    if (pts.ndim() != 2 || pts.shape[1] != 3) {
        throw ShapeError("positional_encoding: want [N,3], got " + shape_str(pts.shape));
    }
    const int n_freq = d / 6;
    const int pad = d - 6 * n_freq;
    std::vector<Tensor> parts;
    parts.reserve(static_cast<std::size_t>(6 * n_freq) + 1);
    for (int c = 0; c < 3; ++c) {
        Tensor col = slice(pts, 1, c, 1);
        for (int f = 0; f < n_freq; ++f) {
            const double omega = 3.141592653589793 * std::pow(2.0, f);
            Tensor ang = scale(col, omega);
            parts.push_back(sin(ang));
            parts.push_back(cos(ang));
        }
    }
    if (pad > 0) parts.push_back(Tensor::zeros({pts.shape[0], pad}));
    return concat(parts, 1);
}

// ------------------------------------------------------------- attention --

MsDeformAttnWeights MsDeformAttnWeights::create(ParamStore& ps, const std::string& prefix, int d,
                                                int heads, int levels, int points, Rng& rng) {
    MsDeformAttnWeights w;
    w.value_proj = Linear::create(ps, prefix + ".value", d, d, rng);
    w.offset_head = Linear::create(ps, prefix + ".offset", d, heads * levels * points * 2, rng);
    w.attn_head = Linear::create(ps, prefix + ".attn", d, heads * levels * points, rng);
    w.out_proj = Linear::create(ps, prefix + ".out", d, d, rng);
    // Offsets start as a per-head ring so initial samples spread around the
    // reference; attention logits start flat.
    fill_const(w.offset_head.w, 0.0);
    fill_const(w.attn_head.w, 0.0);
    fill_const(w.attn_head.b, 0.0);
    for (int h = 0; h < heads; ++h) {
        const double ang = 2.0 * 3.141592653589793 * h / heads;
        for (int j = 0; j < levels; ++j) {
            for (int k = 0; k < points; ++k) {
                const std::int64_t base = ((h * levels + j) * points + k) * 2;
                w.offset_head.b[base] = std::cos(ang) * (k + 1);
                w.offset_head.b[base + 1] = std::sin(ang) * (k + 1);
            }
        }
    }
    return w;
}

MsAttnResult ms_deformable_attention(const Tensor& queries, const Tensor& refs_norm,
                                     const std::vector<Tensor>& value_maps,
                                     const MsDeformAttnWeights& w, int heads, int points) {
    const int lq = queries.shape[0];
    const int d = queries.shape[1];
    const int nlev = static_cast<int>(value_maps.size());
    if (refs_norm.shape[0] != lq || refs_norm.shape[1] != 2) {
        throw ShapeError("ms_deformable_attention: refs must be [Lq,2]");
    }
    for (std::int64_t i = 0; i < refs_norm.size(); ++i) {
        if (refs_norm[i] < 0.0 || refs_norm[i] > 1.0) {
            throw Error("ms_deformable_attention: reference point outside [0,1]^2");
        }
    }

    // Project values and stack level rows.
    std::vector<MsLevel> levels(static_cast<std::size_t>(nlev));
    std::vector<Tensor> value_rows;
    std::int64_t row0 = 0;
    for (int j = 0; j < nlev; ++j) {
        const Tensor& m = value_maps[static_cast<std::size_t>(j)];
        levels[static_cast<std::size_t>(j)] = {m.shape[0], m.shape[1], row0};
        row0 += static_cast<std::int64_t>(m.shape[0]) * m.shape[1];
        value_rows.push_back(reshape(m, {m.shape[0] * m.shape[1], m.shape[2]}));
    }
    Tensor value = w.value_proj.apply(nlev == 1 ? value_rows[0] : concat(value_rows, 0));

    Tensor offsets = reshape(w.offset_head.apply(queries), {lq, heads, nlev, points, 2});
    Tensor logits = reshape(w.attn_head.apply(queries), {lq * heads, nlev * points});
    Tensor attn = reshape(softmax(logits, 1), {lq, heads, nlev, points});

    // Reference pixel coordinates per level, broadcast against the offsets.
    Tensor ref_pix = Tensor::uninit({lq, 1, nlev, 1, 2});
    for (int q = 0; q < lq; ++q) {
        for (int j = 0; j < nlev; ++j) {
            const auto& lv = levels[static_cast<std::size_t>(j)];
            ref_pix[(static_cast<std::int64_t>(q) * nlev + j) * 2] = refs_norm[q * 2] * (lv.w - 1);
            ref_pix[(static_cast<std::int64_t>(q) * nlev + j) * 2 + 1] =
                refs_norm[q * 2 + 1] * (lv.h - 1);
        }
    }
    Tensor loc = add(offsets, ref_pix.detached());

    MsAttnResult res;
    res.attn = attn;
    res.out = w.out_proj.apply(ms_deform_attn(value, loc, attn, levels, heads));
    return res;
}

EncoderWeights EncoderWeights::create(ParamStore& ps, const std::string& prefix,
                                      const TransformerConfig& cfg, Rng& rng) {
    EncoderWeights w;
    w.level_embed = ps.add(prefix + ".level_embed", {cfg.levels, cfg.d});
    fill_normal(w.level_embed, rng, 0.1);
    for (int l = 0; l < cfg.enc_layers; ++l) {
        EncoderLayerWeights layer;
        const std::string lp = prefix + ".layer" + std::to_string(l);
        layer.attn = MsDeformAttnWeights::create(ps, lp + ".attn", cfg.d, cfg.heads, cfg.levels,
                                                 cfg.points, rng);
        layer.ffn1 = Linear::create(ps, lp + ".ffn1", cfg.d, cfg.ffn_hidden, rng);
        layer.ffn2 = Linear::create(ps, lp + ".ffn2", cfg.ffn_hidden, cfg.d, rng);
        w.layers.push_back(std::move(layer));
    }
    return w;
}

FeaturePyramid encode(const FeaturePyramid& pyramid, const TransformerConfig& cfg,
                      const EncoderWeights& w) {
    cfg.validate();
    pyramid.validate();
    if (cfg.enc_layers == 0) return pyramid;

    const int d = pyramid.channels();
    std::vector<int> level_rows;
    std::vector<Tensor> rows;
    std::int64_t total = 0;
    for (const Tensor& m : pyramid.maps) {
        rows.push_back(reshape(m, {m.shape[0] * m.shape[1], d}));
        level_rows.push_back(m.shape[0] * m.shape[1]);
        total += level_rows.back();
    }
    Tensor src = concat(rows, 0);

    // Per-pixel normalized reference (its own coordinate) and level ids.
    Tensor refs = Tensor::uninit({static_cast<int>(total), 2});
    auto level_of = std::make_shared<std::vector<std::int64_t>>();
    level_of->reserve(static_cast<std::size_t>(total));
    {
        std::int64_t r = 0;
        for (int j = 0; j < 4; ++j) {
            const Tensor& m = pyramid.maps[static_cast<std::size_t>(j)];
            const int hh = m.shape[0], ww = m.shape[1];
            for (int py = 0; py < hh; ++py) {
                for (int px = 0; px < ww; ++px) {
                    refs[r * 2] = ww > 1 ? static_cast<double>(px) / (ww - 1) : 0.0;
                    refs[r * 2 + 1] = hh > 1 ? static_cast<double>(py) / (hh - 1) : 0.0;
                    level_of->push_back(j);
                    ++r;
                }
            }
        }
    }

    for (const EncoderLayerWeights& layer : w.layers) {
        Tensor q_in = add(src, gather_rows(w.level_embed, level_of));
        // value maps are the current features reshaped back per level
        std::vector<Tensor> maps;
        std::int64_t row = 0;
        for (int j = 0; j < 4; ++j) {
            const Tensor& m = pyramid.maps[static_cast<std::size_t>(j)];
            Tensor lvl = slice(src, 0, static_cast<int>(row), level_rows[static_cast<std::size_t>(j)]);
            maps.push_back(reshape(lvl, {m.shape[0], m.shape[1], d}));
            row += level_rows[static_cast<std::size_t>(j)];
        }
        MsAttnResult attn = ms_deformable_attention(q_in, refs, maps, layer.attn, cfg.heads,
                                                    cfg.points);
        src = layer_norm(add(src, attn.out), 1);
        Tensor ffn = layer.ffn2.apply(relu(layer.ffn1.apply(src)));
        src = layer_norm(add(src, ffn), 1);
    }

    FeaturePyramid out;
    std::int64_t row = 0;
    for (int j = 0; j < 4; ++j) {
        const Tensor& m = pyramid.maps[static_cast<std::size_t>(j)];
        Tensor lvl = slice(src, 0, static_cast<int>(row), level_rows[static_cast<std::size_t>(j)]);
        out.maps.push_back(reshape(lvl, {m.shape[0], m.shape[1], d}));
        row += level_rows[static_cast<std::size_t>(j)];
    }
    return out;
}

// --------------------------------------------------------------- decoder --

SelfAttnWeights SelfAttnWeights::create(ParamStore& ps, const std::string& prefix, int d,
                                        Rng& rng) {
    SelfAttnWeights w;
    w.q_proj = Linear::create(ps, prefix + ".q", d, d, rng);
    w.k_proj = Linear::create(ps, prefix + ".k", d, d, rng);
    w.v_proj = Linear::create(ps, prefix + ".v", d, d, rng);
    w.o_proj = Linear::create(ps, prefix + ".o", d, d, rng);
    return w;
}

Tensor multi_head_self_attention(const Tensor& x, const SelfAttnWeights& w, int heads) {
    const int d = x.shape[1];
    const int dh = d / heads;
    Tensor q = w.q_proj.apply(x);
    Tensor k = w.k_proj.apply(x);
    Tensor v = w.v_proj.apply(x);
    std::vector<Tensor> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < heads; ++h) {
        Tensor qh = slice(q, 1, h * dh, dh);
        Tensor kh = slice(k, 1, h * dh, dh);
        Tensor vh = slice(v, 1, h * dh, dh);
        Tensor scores = scale(matmul(qh, transpose(kh, {1, 0})), inv_sqrt);
        Tensor attn = softmax(scores, 1);
        outs.push_back(matmul(attn, vh));
    }
    return w.o_proj.apply(heads == 1 ? outs[0] : concat(outs, 1));
}

DecoderWeights DecoderWeights::create(ParamStore& ps, const std::string& prefix,
                                      const TransformerConfig& cfg, Rng& rng) {
    DecoderWeights w;
    w.query_embed = ps.add(prefix + ".query_embed", {cfg.num_queries, cfg.d});
    fill_normal(w.query_embed, rng, 0.1);
    w.ref_head = Linear::create(ps, prefix + ".ref", cfg.d, 3, rng);
    for (int l = 0; l < cfg.dec_layers; ++l) {
        const std::string lp = prefix + ".layer" + std::to_string(l);
        DecoderLayerWeights layer;
        layer.self_attn = SelfAttnWeights::create(ps, lp + ".self", cfg.d, rng);
        layer.samp_weights = Linear::create(ps, lp + ".samp", cfg.d, 4, rng);
        layer.ffn1 = Linear::create(ps, lp + ".ffn1", cfg.d, cfg.ffn_hidden, rng);
        layer.ffn2 = Linear::create(ps, lp + ".ffn2", cfg.ffn_hidden, cfg.d, rng);
        layer.reg_head = Linear::create(ps, lp + ".reg", cfg.d, 10, rng);
        layer.cls_head = Linear::create(ps, lp + ".cls", cfg.d, cfg.num_classes, rng);
        // focal-friendly prior: rare positives at init
        fill_const(layer.cls_head.b, -std::log((1.0 - 0.01) / 0.01));
        w.layers.push_back(std::move(layer));
    }
    return w;
}

Tensor init_reference_points(const Tensor& queries, const Linear& ref_head) {
    return sigmoid(ref_head.apply(queries));
}

Tensor bev_cross_attention(const Tensor& queries, const Tensor& refs, const FeaturePyramid& pyramid,
                           const Linear& samp_weights) {
    if (pyramid.levels() != 4) {
        throw ConfigError("bev_cross_attention: pyramid must have 4 levels, got " +
                          std::to_string(pyramid.levels()));
    }
    Tensor w = sigmoid(samp_weights.apply(queries)); // [N_q, 4], each in (0,1)
    Tensor ref_xy = slice(refs, 1, 0, 2);
    Tensor feat;
    for (int j = 0; j < 4; ++j) {
        const Tensor& m = pyramid.maps[static_cast<std::size_t>(j)];
        Tensor scale_j = Tensor::from({2}, {static_cast<double>(m.shape[1] - 1),
                                            static_cast<double>(m.shape[0] - 1)});
        Tensor loc = mul(ref_xy, scale_j.detached());
        Tensor sampled = bilinear_sample(m, loc);
        Tensor weighted = mul(sampled, slice(w, 1, j, 1));
        feat = feat.defined() ? add(feat, weighted) : weighted;
    }
    Tensor pe = positional_encoding(refs, queries.shape[1]);
    return layer_norm(add(add(queries, feat), pe), 1);
}

DecoderLayerOut decoder_layer(const Tensor& queries, const Tensor& refs,
                              const FeaturePyramid& pyramid, const DecoderLayerWeights& w,
                              const TransformerConfig& cfg) {
    Tensor q = layer_norm(add(queries, multi_head_self_attention(queries, w.self_attn, cfg.heads)), 1);
    q = bev_cross_attention(q, refs, pyramid, w.samp_weights);
    q = layer_norm(add(q, w.ffn2.apply(relu(w.ffn1.apply(q)))), 1);

    Tensor reg = w.reg_head.apply(q);
    DecoderLayerOut out;
    out.queries = q;
    out.pred.center = add(refs, slice(reg, 1, 0, 3));
    out.pred.size_log = slice(reg, 1, 3, 3);
    out.pred.rot = slice(reg, 1, 6, 2);
    out.pred.vel = slice(reg, 1, 8, 2);
    out.pred.cls_logits = w.cls_head.apply(q);
    out.next_refs = clamp(out.pred.center, 0.0, 1.0);
    return out;
}

DecodeResult decode(const FeaturePyramid& pyramid, const TransformerConfig& cfg,
                    const DecoderWeights& w) {
    cfg.validate();
    DecodeResult res;
    Tensor q = w.query_embed;
    Tensor refs = init_reference_points(q, w.ref_head);
    for (const DecoderLayerWeights& layer : w.layers) {
        res.refs.push_back(refs);
        DecoderLayerOut out = decoder_layer(q, refs, pyramid, layer, cfg);
        q = out.queries;
        refs = out.next_refs;
        res.layers.push_back(std::move(out.pred));
    }
    res.refs.push_back(refs);
    return res;
}

Box3D decode_box(const LayerPrediction& pred, int query, const std::array<double, 6>& range) {
    Box3D b;
    const std::int64_t q = query;
    b.cx = range[0] + pred.center[q * 3] * (range[3] - range[0]);
    b.cy = range[1] + pred.center[q * 3 + 1] * (range[4] - range[1]);
    b.cz = range[2] + pred.center[q * 3 + 2] * (range[5] - range[2]);
    b.l = std::exp(pred.size_log[q * 3]);
    b.w = std::exp(pred.size_log[q * 3 + 1]);
    b.h = std::exp(pred.size_log[q * 3 + 2]);
    b.yaw = std::atan2(pred.rot[q * 2], pred.rot[q * 2 + 1]);
    b.vx = pred.vel[q * 2];
    b.vy = pred.vel[q * 2 + 1];
    return b;
}

DetectionSet select_top_k(const LayerPrediction& final, int k, const std::array<double, 6>& range) {
    if (k <= 0) throw ConfigError("select_top_k: k must be positive");
    const int nq = final.cls_logits.shape[0];
    const int nc = final.cls_logits.shape[1];
    std::vector<Detection> all(static_cast<std::size_t>(nq));
    for (int q = 0; q < nq; ++q) {
        double best = -1.0;
        int best_c = 0;
        for (int c = 0; c < nc; ++c) {
            const double logit = final.cls_logits[static_cast<std::int64_t>(q) * nc + c];
            const double p = 1.0 / (1.0 + std::exp(-logit));
            if (p > best) {
                best = p;
                best_c = c;
            }
        }
        Detection& det = all[static_cast<std::size_t>(q)];
        det.box = decode_box(final, q, range);
        det.box.class_id = best_c;
        det.score = best;
        det.query_index = q;
    }
    std::stable_sort(all.begin(), all.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.query_index < b.query_index;
    });
    DetectionSet out;
    const int keep = std::min(k, nq);
    out.dets.assign(all.begin(), all.begin() + keep);
    return out;
}

} // namespace lidet
