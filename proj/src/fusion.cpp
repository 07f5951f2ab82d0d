#include "apt/fusion.hpp"

#include <algorithm>
#include <cmath>

namespace apt {

ParamList AdapterParams::named(const std::string& prefix) const {
    return {{prefix + ".w1", w1}, {prefix + ".b1", b1}, {prefix + ".w2", w2}, {prefix + ".b2", b2}};
}

ParamList FusionBank::named_params() const {
    ParamList out;
    for (std::size_t i = 0; i < adapters.size(); ++i) {
        auto sub = adapters[i].named("adapters." + std::to_string(i));
        out.insert(out.end(), sub.begin(), sub.end());
    }
    out.push_back({"layer_score.w", layer_score_w});
    out.push_back({"layer_score.b", layer_score_b});
    out.push_back({"gate.w", gate_w});
    out.push_back({"gate.b", gate_b});
    return out;
}

FusionBank build_fusion_bank(int teacher_layers, int d_teacher, int d_model,
                             std::vector<int> attachment, Rng& rng) {
    if (teacher_layers < 1) throw ConfigError("fusion bank: teacher must expose layers");
    FusionBank bank;
    const auto dp = static_cast<std::size_t>(d_teacher);
    const auto dm = static_cast<std::size_t>(d_model);
    for (int l = 0; l < teacher_layers; ++l) {
        AdapterParams a;
        a.w1 = xavier_uniform(dp, dm, rng);
        a.b1 = zeros_param({1, dm});
        a.w2 = zeros_param({dm, dm}); // identity start: adapted output begins at zero
        a.b2 = zeros_param({1, dm});
        bank.adapters.push_back(std::move(a));
    }
    bank.layer_score_w = xavier_uniform(dm, 1, rng);
    bank.layer_score_b = zeros_param({1, 1});
    bank.gate_w = xavier_uniform(dm, 1, rng);
    bank.gate_b = zeros_param({1, 1});
    std::sort(attachment.begin(), attachment.end());
    bank.attachment = std::move(attachment);
    return bank;
}

std::vector<Tensor> adapt(const std::vector<Tensor>& teacher_layers, const FusionBank& bank) {
    if (static_cast<int>(teacher_layers.size()) != bank.teacher_layers())
        throw ShapeError("adapt: " + std::to_string(teacher_layers.size()) +
                         " teacher layers vs bank of " + std::to_string(bank.teacher_layers()));
    std::vector<Tensor> out;
    out.reserve(teacher_layers.size());
    for (std::size_t l = 0; l < teacher_layers.size(); ++l) {
        const auto& a = bank.adapters[l];
        Tensor h = relu(add_row_vector(matmul(teacher_layers[l], a.w1), a.b1));
        out.push_back(add_row_vector(matmul(h, a.w2), a.b2));
    }
    return out;
}

LayerAttentionResult layer_attention(const std::vector<Tensor>& adapted,
                                     const Tensor& student_layer, const FusionBank& bank,
                                     AttnProbe* probe) {
    if (adapted.empty()) throw ShapeError("layer_attention: no adapted layers");
    for (const auto& t : adapted)
        if (t.shape() != adapted[0].shape())
            throw ShapeError("layer_attention: adapted layers disagree on shape");
    if (adapted[0].cols() != student_layer.cols())
        throw ShapeError("layer_attention: student layer width differs from adapted width");

    const std::size_t L = adapted.size();
    Tensor alpha;
    if (bank.ablate_layer_attention) {
        alpha = Tensor::from_values({1, L}, std::vector<double>(L, 1.0 / double(L)),
                                    student_layer.dtype(), false);
    } else {
        Tensor student_mean = mean_rows(student_layer);
        std::vector<Tensor> scores;
        scores.reserve(L);
        for (const auto& t : adapted) {
            Tensor prod = mul(mean_rows(t), student_mean);
            scores.push_back(add_row_vector(matmul(prod, bank.layer_score_w), bank.layer_score_b));
        }
        alpha = softmax(L == 1 ? scores[0] : concat_cols(scores), -1);
    }
    if (probe) probe->record_alpha(alpha);

    Tensor composite;
    for (std::size_t l = 0; l < L; ++l) {
        Tensor weighted = scale_by(adapted[l], slice_cols(alpha, l, 1));
        composite = l == 0 ? weighted : add(composite, weighted);
    }
    return {composite, alpha};
}

GateFuseResult gate_fuse(const Tensor& student_layer, const Tensor& composite,
                         const FusionBank& bank) {
    if (student_layer.shape() != composite.shape())
        throw ShapeError("gate_fuse: state shape " + shape_str(student_layer.shape()) +
                         " vs composite " + shape_str(composite.shape()));
    const std::size_t len = student_layer.rows();
    Tensor gamma;
    if (bank.gate_override.has_value()) {
        gamma = Tensor::constant({len, 1}, *bank.gate_override);
        if (*bank.gate_override == 0.0) return {student_layer, gamma}; // exact identity
    } else if (bank.ablate_gating) {
        gamma = Tensor::constant({len, 1}, 1.0);
    } else {
        Tensor raw = add_row_vector(matmul(mul(student_layer, composite), bank.gate_w),
                                    bank.gate_b);
        gamma = sigmoid(raw);
    }
    return {add(student_layer, scale_rows(composite, gamma)), gamma};
}

double FusionTrace::max_alpha_dev() const {
    double worst = 0.0;
    for (const auto& rec : layers) {
        double s = 0.0;
        for (double v : rec.alpha.values()) s += v;
        worst = std::max(worst, std::abs(s - 1.0));
    }
    return worst;
}

namespace {

// Shared fusion step: adapt cached/fresh teacher layers, attend, gate.
LayerHook make_fusion_hook(const std::vector<Tensor>& reps, const FusionBank& bank,
                           const ForwardOptions& opts, FusionTrace* trace) {
    return [&reps, &bank, probe = opts.probe, trace](int layer_index, const Tensor& state) {
        if (!std::binary_search(bank.attachment.begin(), bank.attachment.end(), layer_index))
            return state;
        std::vector<Tensor> adapted = adapt(reps, bank);
        LayerAttentionResult att = layer_attention(adapted, state, bank, probe);
        GateFuseResult gated = gate_fuse(state, att.composite, bank);
        if (trace) trace->layers.push_back({layer_index, att.alpha, att.composite, gated.gates});
        return gated.fused;
    };
}

std::vector<Tensor> teacher_reps_for(const TeacherModel& teacher, const std::vector<int>& tokens,
                                     const std::vector<Tensor>* cached,
                                     std::size_t expect_rows) {
    std::vector<Tensor> reps = cached ? *cached : teacher_representations(teacher, tokens);
    if (reps.empty() || reps[0].rows() != expect_rows)
        throw VocabError("fusion: teacher tokenization does not align with the student's");
    return reps;
}

// Representations of the decoder input prefix itself: position t must see
// exactly tgt_input[0..t], so the causal input convention (which shifts by
// one) does not apply here.
std::vector<Tensor> prefix_reps(const TeacherModel& teacher, const std::vector<int>& tgt_input) {
    TeacherForward fwd = teacher_forward(teacher, tgt_input);
    std::vector<Tensor> out;
    out.reserve(fwd.layers.size());
    for (const auto& layer : fwd.layers) out.push_back(detach(layer));
    return out;
}

} // namespace

EncoderState fused_encode(const TransformerModel& model, const std::vector<int>& tokens,
                          const TeacherModel& teacher, const FusionBank& bank,
                          const ForwardOptions& opts, FusionTrace* trace,
                          const std::vector<Tensor>* cached_reps) {
    if (bank.attachment.empty()) return encode(model, tokens, opts);
    if (teacher.cfg.vocab != model.cfg.src_vocab)
        throw VocabError("fused_encode: teacher and encoder vocabularies differ");
    for (int n : bank.attachment)
        if (n < 0 || n > model.cfg.enc_depth)
            throw ConfigError("fused_encode: attachment index out of range");
    std::vector<Tensor> reps = teacher_reps_for(teacher, tokens, cached_reps, tokens.size());
    return encode(model, tokens, opts, 0, make_fusion_hook(reps, bank, opts, trace));
}

DecodeResult fused_decode(const TransformerModel& model, const std::vector<int>& tgt_input,
                          const EncoderState& enc, const TeacherModel& teacher,
                          const FusionBank& bank, const ForwardOptions& opts, FusionTrace* trace,
                          const std::vector<Tensor>* cached_reps) {
    if (bank.attachment.empty()) return decode(model, tgt_input, enc, opts);
    if (teacher.cfg.vocab != model.cfg.tgt_vocab)
        throw VocabError("fused_decode: teacher and decoder vocabularies differ");
    for (int n : bank.attachment)
        if (n < 0 || n > model.cfg.dec_depth)
            throw ConfigError("fused_decode: attachment index out of range");
    // The teacher consumes the decoder's own input prefix; at inference this
    // is the generated prefix, never the reference.
    std::vector<Tensor> reps = cached_reps ? *cached_reps : prefix_reps(teacher, tgt_input);
    if (reps.empty() || reps[0].rows() != tgt_input.size())
        throw VocabError("fused_decode: teacher prefix does not align with the decoder input");
    return decode(model, tgt_input, enc, opts, make_fusion_hook(reps, bank, opts, trace));
}

} // namespace apt
