#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "apt/data.hpp"
#include "apt/optimizer.hpp"
#include "apt/transformer.hpp"

namespace apt {

enum class TeacherKind { causal, masked };

const char* teacher_kind_name(TeacherKind k);
TeacherKind teacher_kind_from_name(const std::string& name);

struct TeacherConfig {
    TeacherKind kind = TeacherKind::causal;
    int depth = 2;   // L
    int d_model = 64; // d_P; adapters map it to the student width
    int n_heads = 4;
    int d_ff = 128;
    int vocab = 512;
    std::string language = "src"; // side whose tokenizer this model shares
    int max_len = 64;
    double dropout = 0.1;

    void validate() const;
    nlohmann::json to_json() const;
    static TeacherConfig from_json(const nlohmann::json& j);
};

// Self-attention LM stack: embedding, `depth` blocks (causal mask for the
// causal kind, none for the masked kind), and a vocabulary projection.
// Input conventions, shared with the student so positions align index-wise:
//   causal: stack input is bos + z[:-1]; position k then encodes z_{<=k-1}
//           and its logits row predicts z_k (same slots as the NMT decoder).
//   masked: stack input is z itself; position k encodes the whole sentence.
struct TeacherModel {
    TeacherConfig cfg;
    Tensor embed;
    std::vector<EncoderLayerParams> layers;
    Tensor out_w, out_b;
    // Instrumented pass counter; atomic because frozen teachers are shared
    // read-only across worker threads. Copying a model snapshots the count.
    struct CallCounter {
        std::atomic<std::uint64_t> n{0};
        CallCounter() = default;
        CallCounter(const CallCounter& o) : n(o.n.load()) {}
        CallCounter& operator=(const CallCounter& o) {
            n = o.n.load();
            return *this;
        }
        void operator++() { ++n; }
        operator std::uint64_t() const { return n.load(); }
    };
    mutable CallCounter forward_calls;

    ParamList named_params() const;
    void freeze();   // clears requires_grad on every parameter
    bool frozen() const;
    const Tensor& positions() const;

private:
    mutable Tensor pos_cache_;
};

TeacherModel build_teacher(const TeacherConfig& cfg, Rng& rng);

struct TeacherForward {
    std::vector<Tensor> layers; // R^P_1 .. R^P_L (embedding excluded)
    Tensor embedded;            // R^P_0
    Tensor logits;              // [len, vocab]
};

// Raw pass over explicit input ids (no shifting applied here).
TeacherForward teacher_forward(const TeacherModel& model, const std::vector<int>& input,
                               const ForwardOptions& opts = {});

// All L layer outputs for sentence z, each [len(z), d_P], gradient-detached.
// Applies the kind's input convention internally.
std::vector<Tensor> teacher_representations(const TeacherModel& model, const std::vector<int>& z);

enum class DistMode { exact, fast };

struct TeacherDistribution {
    Tensor rows; // [len(y), vocab], softmaxed, detached
    bool biased = false; // fast masked mode sees the token it scores
};

// Per-slot distributions over the shared vocabulary for sequence y.
// Causal teachers need one pass; masked teachers in exact mode run one pass
// per slot with that slot masked (len(y) must be within exact_cap), and in
// fast mode reuse a single unmasked pass, flagged as biased.
TeacherDistribution teacher_distribution(const TeacherModel& model, const std::vector<int>& y,
                                         DistMode mode, int exact_cap = 64);

// ---- masked-LM masking ----------------------------------------------------------

enum class MaskAction { mask_token, random_token, keep };

struct MaskingPlan {
    std::vector<std::size_t> positions;
    std::vector<MaskAction> actions;
};

// Independent selection at `rate` per position; when nothing is selected one
// position is drawn uniformly so every sentence trains. Actions follow the
// 80/10/10 mask/random/keep recipe.
MaskingPlan sample_masking_plan(std::size_t len, double rate, Rng& rng);

// Replaces ids per plan. Random replacements draw from the non-reserved id
// range of `vocab`.
std::vector<int> apply_masking(const std::vector<int>& ids, const MaskingPlan& plan, int vocab,
                               Rng& rng);

// ---- pre-training loops -----------------------------------------------------------

struct PretrainConfig {
    int epochs = 2;
    int batch_size = 32;
    int warmup_steps = 400;
    // 0.5 tames the schedule's d_model^-0.5 base factor, which runs hot at
    // desk-scale widths; calibrated on the memorization and entropy tests.
    double lr_scale = 0.5;
    int max_steps = 0; // 0 = no cap
    double grad_clip = 5.0;
    double mask_rate = 0.15;

    nlohmann::json to_json() const;
    static PretrainConfig from_json(const nlohmann::json& j);
};

struct PretrainEpoch {
    int epoch = 0;
    double valid_ppl = 0.0;
    double valid_loss = 0.0;
};

struct PretrainResult {
    TeacherModel model;
    std::vector<PretrainEpoch> epochs;
    long steps = 0;
};

using PretrainMetricSink = std::function<void(const nlohmann::json&)>;

// Next-token objective over a decoder-style stack.
PretrainResult pretrain_causal(const MonoCorpus& train, const MonoCorpus& valid,
                               const TeacherConfig& cfg, const PretrainConfig& train_cfg,
                               std::uint64_t seed, const PretrainMetricSink& sink = nullptr);

// Masked-token reconstruction over a bidirectional stack (no next-sentence
// objective).
PretrainResult pretrain_masked(const MonoCorpus& train, const MonoCorpus& valid,
                               const TeacherConfig& cfg, const PretrainConfig& train_cfg,
                               std::uint64_t seed, const PretrainMetricSink& sink = nullptr);

// Token-weighted perplexity of a causal teacher on a corpus.
double causal_perplexity(const TeacherModel& model, const MonoCorpus& corpus);

// Fraction of masked positions recovered by argmax under a seeded masking.
double masked_token_accuracy(const TeacherModel& model, const MonoCorpus& corpus, double rate,
                             std::uint64_t seed);

} // namespace apt
