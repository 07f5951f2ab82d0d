#include "apt/transformer.hpp"

#include <cmath>

namespace apt {

namespace {
constexpr double kMaskValue = -1e9;
constexpr double kLnEps = kLayerNormEps;
} // namespace

void AttnProbe::record_attn_rows(const Tensor& weights) {
    const std::size_t m = weights.rows(), n = weights.cols();
    const auto& v = weights.values();
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += v[i * n + j];
        max_attn_row_dev = std::max(max_attn_row_dev, std::abs(s - 1.0));
        ++attn_rows;
    }
    if (capture_weights) capture_weights->push_back(weights);
}

void AttnProbe::record_alpha(const Tensor& alpha) {
    double s = 0.0;
    for (double v : alpha.values()) s += v;
    max_alpha_dev = std::max(max_alpha_dev, std::abs(s - 1.0));
    ++alpha_vectors;
    if (capture_alpha) capture_alpha->push_back(alpha);
}

ParamList AttentionParams::named(const std::string& prefix) const {
    return {{prefix + ".wq", wq}, {prefix + ".bq", bq}, {prefix + ".wk", wk},
            {prefix + ".bk", bk}, {prefix + ".wv", wv}, {prefix + ".bv", bv},
            {prefix + ".wo", wo}, {prefix + ".bo", bo}};
}

ParamList FfnParams::named(const std::string& prefix) const {
    return {{prefix + ".w1", w1}, {prefix + ".b1", b1}, {prefix + ".w2", w2}, {prefix + ".b2", b2}};
}

ParamList LayerNormParams::named(const std::string& prefix) const {
    return {{prefix + ".gain", gain}, {prefix + ".bias", bias}};
}

ParamList EncoderLayerParams::named(const std::string& prefix) const {
    ParamList out = self_attn.named(prefix + ".self_attn");
    ParamList rest = ln_attn.named(prefix + ".ln_attn");
    out.insert(out.end(), rest.begin(), rest.end());
    rest = ffn.named(prefix + ".ffn");
    out.insert(out.end(), rest.begin(), rest.end());
    rest = ln_ffn.named(prefix + ".ln_ffn");
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
}

ParamList DecoderLayerParams::named(const std::string& prefix) const {
    ParamList out = self_attn.named(prefix + ".self_attn");
    auto push = [&out](ParamList sub) { out.insert(out.end(), sub.begin(), sub.end()); };
    push(ln_self.named(prefix + ".ln_self"));
    push(cross_attn.named(prefix + ".cross_attn"));
    push(ln_cross.named(prefix + ".ln_cross"));
    push(ffn.named(prefix + ".ffn"));
    push(ln_ffn.named(prefix + ".ln_ffn"));
    return out;
}

ParamList TransformerModel::named_params() const {
    ParamList out{{"src_embed", src_embed}, {"tgt_embed", tgt_embed}};
    for (std::size_t i = 0; i < encoder.size(); ++i) {
        auto sub = encoder[i].named("encoder." + std::to_string(i));
        out.insert(out.end(), sub.begin(), sub.end());
    }
    for (std::size_t i = 0; i < decoder.size(); ++i) {
        auto sub = decoder[i].named("decoder." + std::to_string(i));
        out.insert(out.end(), sub.begin(), sub.end());
    }
    out.push_back({"out_w", out_w});
    out.push_back({"out_b", out_b});
    return out;
}

AttentionParams build_attention(int d_model, Rng& rng) {
    const auto d = static_cast<std::size_t>(d_model);
    AttentionParams p;
    p.wq = xavier_uniform(d, d, rng);
    p.bq = zeros_param({1, d});
    p.wk = xavier_uniform(d, d, rng);
    p.bk = zeros_param({1, d});
    p.wv = xavier_uniform(d, d, rng);
    p.bv = zeros_param({1, d});
    p.wo = xavier_uniform(d, d, rng);
    p.bo = zeros_param({1, d});
    return p;
}

FfnParams build_ffn(int d_model, int d_ff, Rng& rng) {
    const auto d = static_cast<std::size_t>(d_model);
    const auto f = static_cast<std::size_t>(d_ff);
    FfnParams p;
    p.w1 = xavier_uniform(d, f, rng);
    p.b1 = zeros_param({1, f});
    p.w2 = xavier_uniform(f, d, rng);
    p.b2 = zeros_param({1, d});
    return p;
}

LayerNormParams build_layer_norm(int d_model) {
    const auto d = static_cast<std::size_t>(d_model);
    return {ones_param({1, d}), zeros_param({1, d})};
}

EncoderLayerParams build_encoder_layer(int d_model, int d_ff, Rng& rng) {
    EncoderLayerParams l;
    l.self_attn = build_attention(d_model, rng);
    l.ln_attn = build_layer_norm(d_model);
    l.ffn = build_ffn(d_model, d_ff, rng);
    l.ln_ffn = build_layer_norm(d_model);
    return l;
}

namespace {

DecoderLayerParams build_decoder_layer(int d_model, int d_ff, Rng& rng) {
    DecoderLayerParams l;
    l.self_attn = build_attention(d_model, rng);
    l.ln_self = build_layer_norm(d_model);
    l.cross_attn = build_attention(d_model, rng);
    l.ln_cross = build_layer_norm(d_model);
    l.ffn = build_ffn(d_model, d_ff, rng);
    l.ln_ffn = build_layer_norm(d_model);
    return l;
}

} // namespace

TransformerModel build_transformer(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    TransformerModel m;
    m.cfg = cfg;
    const double emb_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    m.src_embed = normal_init({static_cast<std::size_t>(cfg.src_vocab),
                               static_cast<std::size_t>(cfg.d_model)},
                              emb_std, rng);
    m.tgt_embed = normal_init({static_cast<std::size_t>(cfg.tgt_vocab),
                               static_cast<std::size_t>(cfg.d_model)},
                              emb_std, rng);
    for (int i = 0; i < cfg.enc_depth; ++i)
        m.encoder.push_back(build_encoder_layer(cfg.d_model, cfg.d_ff, rng));
    for (int i = 0; i < cfg.dec_depth; ++i)
        m.decoder.push_back(build_decoder_layer(cfg.d_model, cfg.d_ff, rng));
    m.out_w = xavier_uniform(static_cast<std::size_t>(cfg.d_model),
                             static_cast<std::size_t>(cfg.tgt_vocab), rng);
    m.out_b = zeros_param({1, static_cast<std::size_t>(cfg.tgt_vocab)});
    return m;
}

Tensor sinusoidal_positions(int max_len, int d_model, Dtype dtype) {
    std::vector<double> v(static_cast<std::size_t>(max_len) * d_model);
    for (int pos = 0; pos < max_len; ++pos) {
        for (int i = 0; i < d_model / 2; ++i) {
            const double rate = std::pow(10000.0, 2.0 * i / static_cast<double>(d_model));
            const double angle = pos / rate;
            v[pos * d_model + 2 * i] = std::sin(angle);
            v[pos * d_model + 2 * i + 1] = std::cos(angle);
        }
    }
    return Tensor::from_values({static_cast<std::size_t>(max_len),
                                static_cast<std::size_t>(d_model)},
                               std::move(v), dtype, false);
}

const Tensor& TransformerModel::positions() const {
    if (!pos_cache_.defined() || pos_cache_.dtype() != src_embed.dtype() ||
        pos_cache_.rows() != static_cast<std::size_t>(cfg.max_len))
        pos_cache_ = sinusoidal_positions(cfg.max_len, cfg.d_model, src_embed.dtype());
    return pos_cache_;
}

namespace {

Tensor embed_with(const Tensor& table, const Tensor& positions, const std::vector<int>& tokens,
                  int d_model, int max_len, int vocab) {
    if (static_cast<int>(tokens.size()) > max_len)
        throw InvalidInputError("embed: sequence length " + std::to_string(tokens.size()) +
                                " exceeds max_len " + std::to_string(max_len));
    for (int t : tokens)
        if (t < 0 || t >= vocab)
            throw VocabError("embed: token id " + std::to_string(t) + " outside vocabulary");
    Tensor e = mul_scalar(embedding_lookup(table, tokens),
                          std::sqrt(static_cast<double>(d_model)));
    if (tokens.empty()) return e;
    return add(e, slice_rows(positions, 0, tokens.size()));
}

} // namespace

Tensor embed(const TransformerModel& model, const std::vector<int>& tokens, Side side) {
    const Tensor& table = side == Side::source ? model.src_embed : model.tgt_embed;
    const int vocab = side == Side::source ? model.cfg.src_vocab : model.cfg.tgt_vocab;
    return embed_with(table, model.positions(), tokens, model.cfg.d_model, model.cfg.max_len,
                      vocab);
}

Tensor causal_mask(std::size_t len, Dtype dtype) {
    std::vector<double> v(len * len, 0.0);
    for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = i + 1; j < len; ++j) v[i * len + j] = kMaskValue;
    return Tensor::from_values({len, len}, std::move(v), dtype, false);
}

Tensor padding_mask(std::size_t q_len, std::size_t k_len, std::size_t k_valid, Dtype dtype) {
    std::vector<double> v(q_len * k_len, 0.0);
    for (std::size_t i = 0; i < q_len; ++i)
        for (std::size_t j = k_valid; j < k_len; ++j) v[i * k_len + j] = kMaskValue;
    return Tensor::from_values({q_len, k_len}, std::move(v), dtype, false);
}

Tensor multi_head_attention(const AttentionParams& p, int n_heads, const Tensor& q_in,
                            const Tensor& kv_in, const Tensor* mask, AttnProbe* probe) {
    const std::size_t d = p.wq.cols();
    if (d % static_cast<std::size_t>(n_heads) != 0)
        throw ShapeError("attention: d_model not divisible by head count");
    const std::size_t dh = d / static_cast<std::size_t>(n_heads);
    Tensor q = add_row_vector(matmul(q_in, p.wq), p.bq);
    Tensor k = add_row_vector(matmul(kv_in, p.wk), p.bk);
    Tensor v = add_row_vector(matmul(kv_in, p.wv), p.bv);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<Tensor> heads;
    heads.reserve(n_heads);
    for (int h = 0; h < n_heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, dh);
        Tensor kh = slice_cols(k, h * dh, dh);
        Tensor vh = slice_cols(v, h * dh, dh);
        Tensor scores = mul_scalar(matmul(qh, transpose(kh)), scale);
        if (mask) scores = add(scores, *mask);
        Tensor weights = softmax(scores, -1);
        if (probe) probe->record_attn_rows(weights);
        heads.push_back(matmul(weights, vh));
    }
    Tensor cat = n_heads == 1 ? heads[0] : concat_cols(heads);
    return add_row_vector(matmul(cat, p.wo), p.bo);
}

Tensor ffn_forward(const FfnParams& p, const Tensor& x) {
    return add_row_vector(matmul(relu(add_row_vector(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

Tensor apply_dropout(const Tensor& x, double rate, Rng* rng) {
    if (rate <= 0.0) return x;
    if (!rng) throw InvalidInputError("dropout: active rate requires an rng");
    const double keep = 1.0 - rate;
    std::vector<double> mask(x.size());
    for (double& m : mask) m = rng->uniform() < rate ? 0.0 : 1.0 / keep;
    return mul(x, Tensor::from_values(x.shape(), std::move(mask), x.dtype(), false));
}

Tensor encoder_layer_forward(const EncoderLayerParams& layer, int n_heads, const Tensor& x,
                             const Tensor* mask, const ForwardOptions& opts) {
    Tensor attn = multi_head_attention(layer.self_attn, n_heads, x, x, mask, opts.probe);
    attn = apply_dropout(attn, opts.dropout, opts.rng);
    Tensor h = layer_norm(add(x, attn), layer.ln_attn.gain, layer.ln_attn.bias, kLnEps);
    Tensor f = apply_dropout(ffn_forward(layer.ffn, h), opts.dropout, opts.rng);
    return layer_norm(add(h, f), layer.ln_ffn.gain, layer.ln_ffn.bias, kLnEps);
}

EncoderState encode(const TransformerModel& model, const std::vector<int>& tokens,
                    const ForwardOptions& opts, std::size_t valid_len, const LayerHook& hook) {
    if (tokens.empty() || static_cast<int>(tokens.size()) > model.cfg.max_len)
        throw InvalidInputError("encode: length must be in [1, max_len]");
    if (valid_len == 0) valid_len = tokens.size();
    if (valid_len > tokens.size()) throw InvalidInputError("encode: valid_len exceeds length");

    EncoderState st;
    st.length = tokens.size();
    st.valid_len = valid_len;
    Tensor x = apply_dropout(embed(model, tokens, Side::source), opts.dropout, opts.rng);
    if (hook) x = hook(0, x);
    st.layers.push_back(x);

    Tensor mask;
    const bool padded = valid_len < tokens.size();
    if (padded) mask = padding_mask(tokens.size(), tokens.size(), valid_len, x.dtype());
    int idx = 0;
    for (const auto& layer : model.encoder) {
        x = encoder_layer_forward(layer, model.cfg.n_heads, x, padded ? &mask : nullptr, opts);
        ++idx;
        if (hook) x = hook(idx, x);
        st.layers.push_back(x);
    }
    return st;
}

DecodeResult decode(const TransformerModel& model, const std::vector<int>& tgt_input,
                    const EncoderState& enc, const ForwardOptions& opts, const LayerHook& hook) {
    if (tgt_input.empty() || static_cast<int>(tgt_input.size()) > model.cfg.max_len)
        throw InvalidInputError("decode: length must be in [1, max_len]");
    const std::size_t len = tgt_input.size();

    DecoderState st;
    st.length = len;
    Tensor x = apply_dropout(embed(model, tgt_input, Side::target), opts.dropout, opts.rng);
    if (hook) x = hook(0, x);
    st.layers.push_back(x);

    Tensor self_mask = causal_mask(len, x.dtype());
    Tensor cross_mask;
    const bool padded = enc.valid_len < enc.length;
    if (padded) cross_mask = padding_mask(len, enc.length, enc.valid_len, x.dtype());
    const Tensor& memory = enc.layers.back();

    int idx = 0;
    for (const auto& layer : model.decoder) {
        Tensor sa = multi_head_attention(layer.self_attn, model.cfg.n_heads, x, x, &self_mask,
                                         opts.probe);
        sa = apply_dropout(sa, opts.dropout, opts.rng);
        Tensor s = layer_norm(add(x, sa), layer.ln_self.gain, layer.ln_self.bias, kLnEps);
        st.self_outputs.push_back(s);

        Tensor ca = multi_head_attention(layer.cross_attn, model.cfg.n_heads, s, memory,
                                         padded ? &cross_mask : nullptr, opts.probe);
        ca = apply_dropout(ca, opts.dropout, opts.rng);
        Tensor c = layer_norm(add(s, ca), layer.ln_cross.gain, layer.ln_cross.bias, kLnEps);
        st.cross_outputs.push_back(c);

        Tensor f = apply_dropout(ffn_forward(layer.ffn, c), opts.dropout, opts.rng);
        x = layer_norm(add(c, f), layer.ln_ffn.gain, layer.ln_ffn.bias, kLnEps);
        ++idx;
        if (hook) x = hook(idx, x);
        st.layers.push_back(x);
    }
    Tensor logits = add_row_vector(matmul(x, model.out_w), model.out_b);
    return {logits, std::move(st)};
}

Tensor translation_loss(const Tensor& logits, const std::vector<int>& y_ref,
                        double label_smoothing) {
    if (logits.rows() != y_ref.size())
        throw ShapeError("translation_loss: " + std::to_string(logits.rows()) +
                         " logit rows vs " + std::to_string(y_ref.size()) + " reference tokens");
    return cross_entropy_smoothed(logits, y_ref, label_smoothing);
}

} // namespace apt
