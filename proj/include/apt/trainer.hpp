#pragma once

#include <functional>

#include "apt/eval.hpp"
#include "apt/optimizer.hpp"
#include "apt/strategy.hpp"

namespace apt {

struct TrainerConfig {
    int epochs = 20;
    int batch_size = 32;
    int warmup_steps = 400;
    double lr_scale = 0.5; // desk-scale width runs hot at the schedule's base factor
    double grad_clip = 5.0;
    int max_steps = 0; // 0 = no cap
    int max_len = 64;  // batching filter
    int valid_beam = 1;  // decode width for per-epoch validation BLEU
    int valid_limit = 0; // 0 = decode the whole validation set
    int exact_cap = 64;  // teacher_distribution exact-mode budget
    bool finetune_init = false; // experimental: teacher init before apt training

    nlohmann::json to_json() const;
    static TrainerConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
    int epoch = 0;
    double valid_bleu = 0.0;
    double valid_loss = 0.0;
};

struct TrainResult {
    long steps = 0;
    std::vector<EpochRecord> epochs;
    double best_bleu = -1.0;
    int best_epoch = -1;
    bool aborted = false;
    std::string abort_reason;
    std::size_t skipped_steps = 0;
};

using MetricSink = std::function<void(const nlohmann::json&)>;

// Epoch loop: shuffled bucketed batches, Adam with the warmup schedule,
// per-step and per-epoch JSONL records through `sink`, model selection by
// validation BLEU (greedy subword decode). On return the student holds the
// best-epoch parameters; a non-finite loss aborts training, restores the
// last best parameters, and reports instead of throwing.
TrainResult train(TrainingStep& step, const ParallelCorpus& train_corpus,
                  const ParallelCorpus& valid_corpus, const TrainerConfig& cfg,
                  std::uint64_t seed, const MetricSink& sink = nullptr,
                  AttnProbe* probe = nullptr, int probe_every = 0);

// Plan-aware decoding view over a (frozen) training step.
DecodingModel decoding_model(const TrainingStep& step);
DecodingModel decoding_model(const TransformerModel& model);

// Teacher-forced argmax accuracy over a corpus.
double token_accuracy(const TrainingStep& step, const ParallelCorpus& corpus);

// ---- gradient checking -------------------------------------------------------------

struct GradCheckGroup {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t coords = 0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t coords = 0;
    std::vector<GradCheckGroup> groups;
    double seconds = 0.0;

    bool passed(double tol = 1e-4) const { return max_rel_err <= tol; }
    nlohmann::json to_json() const;
};

// Central finite differences (h = 1e-5, 64-bit mode) against the analytic
// gradients of the plan's full loss on a fixed tiny problem. Samples at
// least `min_coords` coordinates spread over every parameter group; the
// reported relative error floors its denominator at 1e-3, so near-zero
// gradient pairs are compared absolutely at 1e-7.
GradCheckReport gradcheck(const IntegrationPlan& plan, std::uint64_t seed,
                          std::size_t min_coords = 200);

} // namespace apt
