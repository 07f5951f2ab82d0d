#pragma once

#include <optional>
#include <vector>

#include "apt/pretrain.hpp"
#include "apt/transformer.hpp"

namespace apt {

// Per-teacher-layer adapter: two-layer MLP (ReLU) from the teacher width to
// the student width. The output layer is zero-initialized so a fresh bank
// contributes nothing and fused encoding starts as the identity.
struct AdapterParams {
    Tensor w1, b1, w2, b2;
    ParamList named(const std::string& prefix) const;
};

struct FusionBank {
    std::vector<AdapterParams> adapters; // one per teacher layer
    Tensor layer_score_w, layer_score_b; // d_model -> 1 scorer behind the layer softmax
    Tensor gate_w, gate_b;               // d_model -> 1 scorer inside the gate sigmoid
    std::vector<int> attachment;         // student layers to fuse into (0 = embedding)

    bool ablate_layer_attention = false; // uniform mean over adapted layers
    bool ablate_gating = false;          // gamma pinned to 1
    std::optional<double> gate_override; // pins gamma to a constant; 0 short-circuits

    int teacher_layers() const { return static_cast<int>(adapters.size()); }
    ParamList named_params() const;
};

FusionBank build_fusion_bank(int teacher_layers, int d_teacher, int d_model,
                             std::vector<int> attachment, Rng& rng);

// R^T_l = G_l(R^P_l), position-wise; every output is [len, d_model].
std::vector<Tensor> adapt(const std::vector<Tensor>& teacher_layers, const FusionBank& bank);

struct LayerAttentionResult {
    Tensor composite; // [len, d_model]
    Tensor alpha;     // [1, L]
};

// Scores each adapted layer against the current student layer by the
// elementwise product of their position-means fed to the scalar scorer, then
// softmax-combines the layers.
LayerAttentionResult layer_attention(const std::vector<Tensor>& adapted,
                                     const Tensor& student_layer, const FusionBank& bank,
                                     AttnProbe* probe = nullptr);

struct GateFuseResult {
    Tensor fused; // [len, d_model]
    Tensor gates; // [len, 1]
};

// gamma_i = sigmoid(gate(r_i ⊙ c_i)); fused_i = r_i + gamma_i * c_i.
GateFuseResult gate_fuse(const Tensor& student_layer, const Tensor& composite,
                         const FusionBank& bank);

struct FusionTrace {
    struct LayerRecord {
        int layer = -1;
        Tensor alpha;     // [1, L]
        Tensor composite; // pre-gate C^T_n
        Tensor gates;     // [len, 1]
    };
    std::vector<LayerRecord> layers;

    double max_alpha_dev() const; // max |sum(alpha) - 1| across records
};

// Standard encode with the post-layer state replaced by the fused state at
// every attached index (0 fuses the embedding, enc_depth fuses the output).
// Teacher representations may be supplied from a cache; otherwise the teacher
// runs on the same token ids (shared tokenizer, index-aligned).
EncoderState fused_encode(const TransformerModel& model, const std::vector<int>& tokens,
                          const TeacherModel& teacher, const FusionBank& bank,
                          const ForwardOptions& opts = {}, FusionTrace* trace = nullptr,
                          const std::vector<Tensor>* cached_reps = nullptr);

// Decoder-side variant: replaces decoder layer states. The teacher runs on
// the decoder input prefix, which for a masked teacher deviates from its
// pre-training convention; supported to reproduce the strategy comparison,
// not recommended.
DecodeResult fused_decode(const TransformerModel& model, const std::vector<int>& tgt_input,
                          const EncoderState& enc, const TeacherModel& teacher,
                          const FusionBank& bank, const ForwardOptions& opts = {},
                          FusionTrace* trace = nullptr,
                          const std::vector<Tensor>* cached_reps = nullptr);

} // namespace apt
