#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "apt/model_config.hpp"
#include "apt/params.hpp"
#include "apt/rng.hpp"
#include "apt/tensor.hpp"

namespace apt {

inline constexpr double kLayerNormEps = 1e-6;

// Collects normalization diagnostics during a forward pass: every softmax row
// produced by attention, and (when fusion is active) every layer-attention
// alpha vector. Used by tests and the acceptance probes.
struct AttnProbe {
    std::size_t attn_rows = 0;
    double max_attn_row_dev = 0.0; // max |sum(row) - 1|
    std::size_t alpha_vectors = 0;
    double max_alpha_dev = 0.0;
    std::vector<Tensor>* capture_weights = nullptr; // full attention matrices when set
    std::vector<Tensor>* capture_alpha = nullptr;

    void record_attn_rows(const Tensor& weights);
    void record_alpha(const Tensor& alpha);
};

struct ForwardOptions {
    double dropout = 0.0; // 0 disables; >0 requires rng
    Rng* rng = nullptr;
    AttnProbe* probe = nullptr;
};

struct AttentionParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    ParamList named(const std::string& prefix) const;
};

struct FfnParams {
    Tensor w1, b1, w2, b2;
    ParamList named(const std::string& prefix) const;
};

struct LayerNormParams {
    Tensor gain, bias;
    ParamList named(const std::string& prefix) const;
};

// One self-attention block: attention + residual + norm, ffn + residual +
// norm. Also the layer shape of both pre-trained teacher stacks (a causal LM
// is this block under a causal mask).
struct EncoderLayerParams {
    AttentionParams self_attn;
    LayerNormParams ln_attn;
    FfnParams ffn;
    LayerNormParams ln_ffn;
    ParamList named(const std::string& prefix) const;
};

struct DecoderLayerParams {
    AttentionParams self_attn;
    LayerNormParams ln_self;
    AttentionParams cross_attn;
    LayerNormParams ln_cross;
    FfnParams ffn;
    LayerNormParams ln_ffn;
    ParamList named(const std::string& prefix) const;
};

struct TransformerModel {
    ModelConfig cfg;
    Tensor src_embed, tgt_embed; // [V, d_model]
    std::vector<EncoderLayerParams> encoder;
    std::vector<DecoderLayerParams> decoder;
    Tensor out_w, out_b; // single linear projection to target vocab logits

    ParamList named_params() const;

    // Sinusoidal table, built lazily and rebuilt if the model dtype changes.
    const Tensor& positions() const;

private:
    mutable Tensor pos_cache_;
};

TransformerModel build_transformer(const ModelConfig& cfg, Rng& rng);

AttentionParams build_attention(int d_model, Rng& rng);
FfnParams build_ffn(int d_model, int d_ff, Rng& rng);
LayerNormParams build_layer_norm(int d_model);
EncoderLayerParams build_encoder_layer(int d_model, int d_ff, Rng& rng);

// Per-layer encoder states. layers[0] is embedding + positional encoding
// (after embedding dropout when active); layers[n] for n>=1 is the output of
// layer n, possibly replaced by a fused state when fusion attaches there.
struct EncoderState {
    std::vector<Tensor> layers; // enc_depth + 1 entries, each [len, d_model]
    std::size_t length = 0;     // total rows fed to the encoder
    std::size_t valid_len = 0;  // rows that are not padding
};

struct DecoderState {
    std::vector<Tensor> layers;       // dec_depth + 1 entries, each [len, d_model]
    std::vector<Tensor> self_outputs; // post-norm state after each self-attention sublayer
    std::vector<Tensor> cross_outputs;
    std::size_t length = 0;
};

struct DecodeResult {
    Tensor logits; // [len, tgt_vocab]
    DecoderState state;
};

enum class Side { source, target };

// Fixed sinusoidal table, [max_len, d_model], not trainable.
Tensor sinusoidal_positions(int max_len, int d_model, Dtype dtype);

// Embedding * sqrt(d_model) + positional encoding. Throws VocabError on
// out-of-range ids and InvalidInputError past max_len.
Tensor embed(const TransformerModel& model, const std::vector<int>& tokens, Side side);

// Additive attention masks: 0 where attending is allowed, -1e9 where banned.
Tensor causal_mask(std::size_t len, Dtype dtype);
Tensor padding_mask(std::size_t q_len, std::size_t k_len, std::size_t k_valid, Dtype dtype);

Tensor multi_head_attention(const AttentionParams& p, int n_heads, const Tensor& q_in,
                            const Tensor& kv_in, const Tensor* mask, AttnProbe* probe);

Tensor ffn_forward(const FfnParams& p, const Tensor& x);

Tensor apply_dropout(const Tensor& x, double rate, Rng* rng);

// Runs one encoder block (self-attention sublayer then ffn sublayer, each
// post-norm). `mask` is optional; teachers pass a causal or null mask.
Tensor encoder_layer_forward(const EncoderLayerParams& layer, int n_heads, const Tensor& x,
                             const Tensor* mask, const ForwardOptions& opts);

// Post-layer rewrite point for fusion: receives the layer index (0 =
// embedding) and the state, returns the state to continue with.
using LayerHook = std::function<Tensor(int layer_index, const Tensor& state)>;

// valid_len < tokens.size() marks trailing positions as padding (ignored as
// attention keys). valid_len == 0 means all positions are valid.
EncoderState encode(const TransformerModel& model, const std::vector<int>& tokens,
                    const ForwardOptions& opts = {}, std::size_t valid_len = 0,
                    const LayerHook& hook = nullptr);

// `tgt_input` is the shifted target (bos, y_1, ..., y_{J-1}); row j of the
// returned logits scores the token at slot j+1, i.e. rows predict y_1..y_J.
DecodeResult decode(const TransformerModel& model, const std::vector<int>& tgt_input,
                    const EncoderState& enc, const ForwardOptions& opts = {},
                    const LayerHook& hook = nullptr);

// Token-mean label-smoothed NLL, minimized. With smoothing 0 this is
// -(1/J) sum_j log P(y_j | y_<j, x).
Tensor translation_loss(const Tensor& logits, const std::vector<int>& y_ref,
                        double label_smoothing);

} // namespace apt
