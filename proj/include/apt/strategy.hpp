#pragma once

#include <memory>
#include <optional>
#include <unordered_map>

#include "apt/distill.hpp"
#include "apt/fusion.hpp"
#include "apt/pretrain.hpp"

namespace apt {

enum class PlanMode { baseline, finetune, apt };
enum class PlanSide { none, encoder, decoder, both };

const char* plan_mode_name(PlanMode m);
PlanMode plan_mode_from_name(const std::string& s);
const char* plan_side_name(PlanSide s);
PlanSide plan_side_from_name(const std::string& s);

inline bool covers_encoder(PlanSide s) { return s == PlanSide::encoder || s == PlanSide::both; }
inline bool covers_decoder(PlanSide s) { return s == PlanSide::decoder || s == PlanSide::both; }

// Layer-set selector over student layer indices 0..depth, where 0 is the
// embedding and depth is the output layer. "middle" excludes both ends.
struct LayerSet {
    enum class Kind { embedding, middle, output, all, explicit_list };
    Kind kind = Kind::all;
    std::vector<int> explicit_layers;

    std::vector<int> resolve(int depth) const;
    nlohmann::json to_json() const;
    static LayerSet from_json(const nlohmann::json& j);
    static LayerSet output_only();
};

struct PlanAblations {
    bool no_gating = false;
    bool no_layer_attention = false;
    bool no_word_distill = false;
    bool no_sent_distill = false;

    nlohmann::json to_json() const;
    static PlanAblations from_json(const nlohmann::json& j);
};

// Declarative description of which mechanisms attach where. Pure data;
// serializes with exactly these field names.
struct IntegrationPlan {
    PlanMode mode = PlanMode::baseline;
    PlanSide fusion_side = PlanSide::none;
    PlanSide distill_side = PlanSide::none;
    LayerSet fusion_layers;                       // default: all
    LayerSet distill_layers = LayerSet::output_only();
    std::string encoder_teacher = "none"; // none | causal | masked
    std::string decoder_teacher = "none";
    PlanAblations ablations;
    double eta = 0.5;
    double beta = 0.5;

    nlohmann::json to_json() const;
    static IntegrationPlan from_json(const nlohmann::json& j);

    bool needs_encoder_teacher() const;
    bool needs_decoder_teacher() const;

    // The recommended default: masked-teacher fusion on the encoder and
    // causal-teacher distillation on the decoder.
    static IntegrationPlan recommended();
};

struct TeacherSlot {
    bool present = false;
    TeacherConfig cfg;
};

struct TeacherInventory {
    TeacherSlot encoder; // source-language slot
    TeacherSlot decoder; // target-language slot
};

struct PlanViolation {
    std::string code;
    std::string message;
};

struct PlanReport {
    bool valid = false;
    std::vector<PlanViolation> violations;
    std::vector<std::string> warnings;
    std::vector<int> encoder_fusion_layers, decoder_fusion_layers;
    std::vector<int> encoder_distill_layers, decoder_distill_layers;
    std::size_t fusion_params_added = 0;
    std::vector<std::string> active_losses; // subset of {"l_t","l_s","l_w"}

    nlohmann::json to_json() const;
};

// Structural validation; returns violations instead of throwing.
PlanReport validate_plan(const IntegrationPlan& plan, const ModelConfig& model,
                         const TeacherInventory& teachers);

// ---- fine-tuning initialization ----------------------------------------------------

// Copies embedding and layer parameters from the given teachers into the
// student sides. Decoder cross-attention (absent from any LM teacher) stays
// freshly initialized; copied parameters remain trainable. All shapes are
// checked before anything is written, so a failure leaves the student
// untouched.
void apply_finetune(TransformerModel& student, const TeacherModel* encoder_teacher,
                    const TeacherModel* decoder_teacher);

// ---- training-step composition ------------------------------------------------------

struct StudentModel {
    TransformerModel nmt;
    std::optional<FusionBank> enc_fusion, dec_fusion;

    ParamList named_params() const; // "model.*" then "enc_fusion.*" / "dec_fusion.*"
};

struct Teachers {
    std::shared_ptr<TeacherModel> encoder; // source-language
    std::shared_ptr<TeacherModel> decoder; // target-language
};

// Builds the student (model + fusion banks sized per plan) from a validated
// plan. Finetune-style initialization is applied when requested.
StudentModel build_student(const IntegrationPlan& plan, const ModelConfig& cfg,
                           const Teachers& teachers, Rng& rng, bool finetune_init);

// Composes the per-sentence forward pass and LossBundle for a plan. Teacher
// representations and distributions for training sentences are cached by key
// (they are constant while teachers stay frozen); pass a negative key to
// bypass the cache.
class TrainingStep {
public:
    TrainingStep(const IntegrationPlan& plan, const ModelConfig& cfg, StudentModel& student,
                 Teachers teachers, int exact_cap = 64);

    LossBundle run(const SentencePair& pair, long cache_key, const ForwardOptions& opts,
                   FusionTrace* trace = nullptr);

    // Frozen-parameter views used by beam search: plan-aware encode/decode.
    EncoderState encode_source(const std::vector<int>& src, AttnProbe* probe = nullptr) const;
    DecodeResult decode_prefix(const std::vector<int>& tgt_input, const EncoderState& enc,
                               AttnProbe* probe = nullptr) const;

    const IntegrationPlan& plan() const { return plan_; }
    const ModelConfig& config() const { return cfg_; }
    StudentModel& student() { return student_; }
    const StudentModel& student() const { return student_; }

private:
    IntegrationPlan plan_;
    ModelConfig cfg_;
    StudentModel& student_;
    Teachers teachers_;
    int exact_cap_;
    std::vector<int> enc_fusion_layers_, dec_fusion_layers_;
    std::vector<int> enc_distill_layers_, dec_distill_layers_;
    bool word_active_ = false, sent_active_ = false;

    std::unordered_map<long, std::vector<Tensor>> enc_rep_cache_;
    std::unordered_map<long, std::vector<Tensor>> dec_rep_cache_;    // sentence convention
    std::unordered_map<long, std::vector<Tensor>> dec_prefix_cache_; // decoder-input convention
    std::unordered_map<long, Tensor> dec_dist_cache_;
};

std::unique_ptr<TrainingStep> build_training_step(const IntegrationPlan& plan,
                                                  const ModelConfig& cfg, StudentModel& student,
                                                  Teachers teachers, int exact_cap = 64);

} // namespace apt
