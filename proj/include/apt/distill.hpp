#pragma once

#include <optional>

#include "apt/tensor.hpp"
#include "apt/transformer.hpp"

namespace apt {

// Word-level distillation: token-mean cross entropy of the student's
// per-slot distributions against full teacher rows, minimized. With a
// one-hot teacher this reduces to the unsmoothed translation loss.
Tensor word_distill_loss(const Tensor& student_logits, const Tensor& teacher_rows);

// Sentence-level distillation: (1/J) sum_j ||student_j - teacher_j||^2.
// The teacher side is detached; widths must match exactly (no projection).
Tensor sent_distill_loss(const Tensor& student_reps, const Tensor& teacher_reps);

struct LossBundle {
    Tensor l_t, l_s, l_w; // translation, sentence-level, word-level
    double eta = 0.5, beta = 0.5;
    Tensor total; // l_t + eta*l_s + beta*l_w

    double translation() const { return l_t.item(); }
    double sentence() const { return l_s.item(); }
    double word() const { return l_w.item(); }
    double combined() const { return total.item(); }
};

// Absent distillation terms enter as constant zeros, so baseline bundles
// carry eta*l_s == beta*l_w == 0 and backward reduces to the translation
// gradient alone.
LossBundle joint_loss(const Tensor& l_t, const std::optional<Tensor>& l_s,
                      const std::optional<Tensor>& l_w, double eta, double beta);

// Sentence-level distillation applied to the encoder output against the
// source teacher's top layer.
Tensor encoder_sent_distill(const EncoderState& enc, const std::vector<Tensor>& src_teacher_reps);

} // namespace apt
