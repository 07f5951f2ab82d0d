#include "apt/distill.hpp"

#include <cmath>

namespace apt {

Tensor word_distill_loss(const Tensor& student_logits, const Tensor& teacher_rows) {
    return soft_cross_entropy(student_logits, teacher_rows);
}

Tensor sent_distill_loss(const Tensor& student_reps, const Tensor& teacher_reps) {
    if (student_reps.shape().size() != 2 || teacher_reps.shape().size() != 2)
        throw ShapeError("sent_distill_loss: expected 2-D representation matrices");
    if (student_reps.cols() != teacher_reps.cols())
        throw ShapeError("sent_distill_loss: student width " +
                         std::to_string(student_reps.cols()) + " vs teacher width " +
                         std::to_string(teacher_reps.cols()) +
                         "; configure matching model widths, no projection is applied");
    if (student_reps.rows() != teacher_reps.rows())
        throw ShapeError("sent_distill_loss: position counts differ");
    Tensor diff = sub(student_reps, detach(teacher_reps));
    return mul_scalar(sum_all(mul(diff, diff)), 1.0 / static_cast<double>(student_reps.rows()));
}

LossBundle joint_loss(const Tensor& l_t, const std::optional<Tensor>& l_s,
                      const std::optional<Tensor>& l_w, double eta, double beta) {
    if (eta < 0.0 || beta < 0.0)
        throw InvalidInputError("joint_loss: mixing weights must be non-negative");
    auto check = [](const Tensor& t, const char* name) {
        if (t.size() != 1) throw ShapeError(std::string("joint_loss: ") + name + " not scalar");
        if (t.item() < -1e-12)
            throw InvalidInputError(std::string("joint_loss: ") + name +
                                    " is negative under the minimization convention");
    };
    check(l_t, "l_t");
    LossBundle b;
    b.l_t = l_t;
    b.eta = eta;
    b.beta = beta;
    b.l_s = l_s ? *l_s : Tensor::from_values({1}, {0.0}, l_t.dtype(), false);
    b.l_w = l_w ? *l_w : Tensor::from_values({1}, {0.0}, l_t.dtype(), false);
    if (l_s) check(*l_s, "l_s");
    if (l_w) check(*l_w, "l_w");

    Tensor total = l_t;
    if (l_s && eta != 0.0) total = add(total, mul_scalar(*l_s, eta));
    if (l_w && beta != 0.0) total = add(total, mul_scalar(*l_w, beta));
    b.total = total;
    return b;
}

Tensor encoder_sent_distill(const EncoderState& enc, const std::vector<Tensor>& src_teacher_reps) {
    if (enc.layers.empty()) throw InvalidInputError("encoder_sent_distill: empty encoder state");
    if (src_teacher_reps.empty())
        throw InvalidInputError("encoder_sent_distill: teacher exposed no layers");
    return sent_distill_loss(enc.layers.back(), src_teacher_reps.back());
}

} // namespace apt
