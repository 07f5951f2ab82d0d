#include "apt/strategy.hpp"

#include <algorithm>

namespace apt {

const char* plan_mode_name(PlanMode m) {
    switch (m) {
    case PlanMode::baseline: return "baseline";
    case PlanMode::finetune: return "finetune";
    case PlanMode::apt: return "apt";
    }
    return "baseline";
}

PlanMode plan_mode_from_name(const std::string& s) {
    if (s == "baseline") return PlanMode::baseline;
    if (s == "finetune") return PlanMode::finetune;
    if (s == "apt") return PlanMode::apt;
    throw ConfigError("unknown plan mode: " + s);
}

const char* plan_side_name(PlanSide s) {
    switch (s) {
    case PlanSide::none: return "none";
    case PlanSide::encoder: return "encoder";
    case PlanSide::decoder: return "decoder";
    case PlanSide::both: return "both";
    }
    return "none";
}

PlanSide plan_side_from_name(const std::string& s) {
    if (s == "none") return PlanSide::none;
    if (s == "encoder") return PlanSide::encoder;
    if (s == "decoder") return PlanSide::decoder;
    if (s == "both") return PlanSide::both;
    throw ConfigError("unknown plan side: " + s);
}

std::vector<int> LayerSet::resolve(int depth) const {
    std::vector<int> out;
    switch (kind) {
    case Kind::embedding: out = {0}; break;
    case Kind::output: out = {depth}; break;
    case Kind::middle:
        for (int i = 1; i < depth; ++i) out.push_back(i);
        break;
    case Kind::all:
        for (int i = 0; i <= depth; ++i) out.push_back(i);
        break;
    case Kind::explicit_list:
        out = explicit_layers;
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        for (int i : out)
            if (i < 0 || i > depth)
                throw ConfigError("layer set index " + std::to_string(i) +
                                  " outside depth " + std::to_string(depth));
        break;
    }
    return out;
}

nlohmann::json LayerSet::to_json() const {
    switch (kind) {
    case Kind::embedding: return "embedding";
    case Kind::middle: return "middle";
    case Kind::output: return "output";
    case Kind::all: return "all";
    case Kind::explicit_list: return explicit_layers;
    }
    return "all";
}

LayerSet LayerSet::from_json(const nlohmann::json& j) {
    LayerSet s;
    if (j.is_string()) {
        const std::string v = j.get<std::string>();
        if (v == "embedding") s.kind = Kind::embedding;
        else if (v == "middle") s.kind = Kind::middle;
        else if (v == "output") s.kind = Kind::output;
        else if (v == "all") s.kind = Kind::all;
        else throw ConfigError("unknown layer selector: " + v);
        return s;
    }
    if (j.is_array()) {
        s.kind = Kind::explicit_list;
        for (const auto& e : j) s.explicit_layers.push_back(e.get<int>());
        return s;
    }
    throw ConfigError("layer selector must be a string or an index array");
}

LayerSet LayerSet::output_only() {
    LayerSet s;
    s.kind = Kind::output;
    return s;
}

nlohmann::json PlanAblations::to_json() const {
    return {{"no_gating", no_gating},
            {"no_layer_attention", no_layer_attention},
            {"no_word_distill", no_word_distill},
            {"no_sent_distill", no_sent_distill}};
}

PlanAblations PlanAblations::from_json(const nlohmann::json& j) {
    reject_unknown_keys(j, {"no_gating", "no_layer_attention", "no_word_distill", "no_sent_distill"},
                        "ablations");
    PlanAblations a;
    a.no_gating = j.value("no_gating", false);
    a.no_layer_attention = j.value("no_layer_attention", false);
    a.no_word_distill = j.value("no_word_distill", false);
    a.no_sent_distill = j.value("no_sent_distill", false);
    return a;
}

nlohmann::json IntegrationPlan::to_json() const {
    return {{"mode", plan_mode_name(mode)},
            {"fusion_side", plan_side_name(fusion_side)},
            {"distill_side", plan_side_name(distill_side)},
            {"fusion_layers", fusion_layers.to_json()},
            {"distill_layers", distill_layers.to_json()},
            {"encoder_teacher", encoder_teacher},
            {"decoder_teacher", decoder_teacher},
            {"ablations", ablations.to_json()},
            {"eta", eta},
            {"beta", beta}};
}

IntegrationPlan IntegrationPlan::from_json(const nlohmann::json& j) {
    reject_unknown_keys(j,
                        {"mode", "fusion_side", "distill_side", "fusion_layers", "distill_layers",
                         "encoder_teacher", "decoder_teacher", "ablations", "eta", "beta"},
                        "plan");
    IntegrationPlan p;
    if (j.contains("mode")) p.mode = plan_mode_from_name(j.at("mode").get<std::string>());
    if (j.contains("fusion_side"))
        p.fusion_side = plan_side_from_name(j.at("fusion_side").get<std::string>());
    if (j.contains("distill_side"))
        p.distill_side = plan_side_from_name(j.at("distill_side").get<std::string>());
    if (j.contains("fusion_layers")) p.fusion_layers = LayerSet::from_json(j.at("fusion_layers"));
    if (j.contains("distill_layers"))
        p.distill_layers = LayerSet::from_json(j.at("distill_layers"));
    p.encoder_teacher = j.value("encoder_teacher", p.encoder_teacher);
    p.decoder_teacher = j.value("decoder_teacher", p.decoder_teacher);
    if (j.contains("ablations")) p.ablations = PlanAblations::from_json(j.at("ablations"));
    p.eta = j.value("eta", p.eta);
    p.beta = j.value("beta", p.beta);
    if (p.encoder_teacher != "none" && p.encoder_teacher != "causal" &&
        p.encoder_teacher != "masked")
        throw ConfigError("plan: encoder_teacher must be none|causal|masked");
    if (p.decoder_teacher != "none" && p.decoder_teacher != "causal" &&
        p.decoder_teacher != "masked")
        throw ConfigError("plan: decoder_teacher must be none|causal|masked");
    return p;
}

bool IntegrationPlan::needs_encoder_teacher() const {
    if (mode == PlanMode::finetune) return encoder_teacher != "none";
    if (mode != PlanMode::apt) return false;
    return covers_encoder(fusion_side) || covers_encoder(distill_side);
}

bool IntegrationPlan::needs_decoder_teacher() const {
    if (mode == PlanMode::finetune) return decoder_teacher != "none";
    if (mode != PlanMode::apt) return false;
    return covers_decoder(fusion_side) || covers_decoder(distill_side);
}

IntegrationPlan IntegrationPlan::recommended() {
    IntegrationPlan p;
    p.mode = PlanMode::apt;
    p.fusion_side = PlanSide::encoder;
    p.distill_side = PlanSide::decoder;
    p.encoder_teacher = "masked";
    p.decoder_teacher = "causal";
    return p;
}

nlohmann::json PlanReport::to_json() const {
    nlohmann::json v = nlohmann::json::array();
    for (const auto& x : violations) v.push_back({{"code", x.code}, {"message", x.message}});
    return {{"valid", valid},
            {"violations", v},
            {"warnings", warnings},
            {"encoder_fusion_layers", encoder_fusion_layers},
            {"decoder_fusion_layers", decoder_fusion_layers},
            {"encoder_distill_layers", encoder_distill_layers},
            {"decoder_distill_layers", decoder_distill_layers},
            {"fusion_params_added", fusion_params_added},
            {"active_losses", active_losses}};
}

namespace {

std::size_t fusion_param_count(const TeacherConfig& t, int d_model) {
    const std::size_t dp = static_cast<std::size_t>(t.d_model);
    const std::size_t dm = static_cast<std::size_t>(d_model);
    const std::size_t adapter = dp * dm + dm + dm * dm + dm;
    return static_cast<std::size_t>(t.depth) * adapter + 2 * (dm + 1);
}

} // namespace

PlanReport validate_plan(const IntegrationPlan& plan, const ModelConfig& model,
                         const TeacherInventory& teachers) {
    PlanReport report;
    auto violate = [&](const std::string& code, const std::string& msg) {
        report.violations.push_back({code, msg});
    };

    if (plan.eta < 0.0 || plan.beta < 0.0)
        violate("negative_weight", "eta and beta must be non-negative");

    const bool fusion_enc = plan.mode == PlanMode::apt && covers_encoder(plan.fusion_side);
    const bool fusion_dec = plan.mode == PlanMode::apt && covers_decoder(plan.fusion_side);
    const bool distill_enc = plan.mode == PlanMode::apt && covers_encoder(plan.distill_side);
    const bool distill_dec = plan.mode == PlanMode::apt && covers_decoder(plan.distill_side);

    if (plan.mode == PlanMode::apt && plan.fusion_side == PlanSide::none &&
        plan.distill_side == PlanSide::none)
        violate("empty_apt_plan", "empty APT plan: neither fusion nor distillation attaches");

    if (plan.mode == PlanMode::baseline &&
        (plan.fusion_side != PlanSide::none || plan.distill_side != PlanSide::none))
        report.warnings.push_back("baseline mode ignores fusion_side/distill_side");

    if (plan.mode == PlanMode::finetune && plan.encoder_teacher == "none" &&
        plan.decoder_teacher == "none")
        violate("finetune_without_teacher", "finetune mode requires at least one teacher");

    auto check_teacher = [&](const char* which, const std::string& kind, const TeacherSlot& slot,
                             const std::string& language, bool used) {
        if (!used) return;
        if (kind == "none") {
            violate("missing_teacher_kind",
                    std::string(which) + " side is active but its teacher kind is none");
            return;
        }
        if (!slot.present) {
            violate("missing_teacher", std::string(which) + " teacher checkpoint not provided");
            return;
        }
        if (teacher_kind_name(slot.cfg.kind) != kind)
            violate("teacher_kind_mismatch", std::string(which) + " plan wants " + kind +
                                                 " but the loaded teacher is " +
                                                 teacher_kind_name(slot.cfg.kind));
        if (slot.cfg.language != language)
            violate("teacher_language_mismatch", std::string(which) + " teacher is for \"" +
                                                     slot.cfg.language + "\", expected \"" +
                                                     language + "\"");
    };
    const bool enc_used = plan.needs_encoder_teacher();
    const bool dec_used = plan.needs_decoder_teacher();
    check_teacher("encoder", plan.encoder_teacher, teachers.encoder, "src", enc_used);
    check_teacher("decoder", plan.decoder_teacher, teachers.decoder, "tgt", dec_used);

    if (fusion_enc && teachers.encoder.present &&
        teachers.encoder.cfg.vocab != model.src_vocab)
        violate("vocab_mismatch", "encoder fusion teacher vocabulary differs from the source side");
    if (fusion_dec && teachers.decoder.present &&
        teachers.decoder.cfg.vocab != model.tgt_vocab)
        violate("vocab_mismatch", "decoder fusion teacher vocabulary differs from the target side");
    if (distill_dec && !plan.ablations.no_word_distill && teachers.decoder.present &&
        teachers.decoder.cfg.vocab != model.tgt_vocab)
        violate("vocab_mismatch", "word distillation needs the teacher and student to share the "
                                  "target vocabulary");
    if (distill_enc && !plan.ablations.no_sent_distill && teachers.encoder.present &&
        teachers.encoder.cfg.d_model != model.d_model)
        violate("width_mismatch", "encoder sentence distillation needs teacher width d_P == "
                                  "d_model; no projection is applied");
    if (distill_dec && !plan.ablations.no_sent_distill && teachers.decoder.present &&
        teachers.decoder.cfg.d_model != model.d_model)
        violate("width_mismatch", "decoder sentence distillation needs teacher width d_P == "
                                  "d_model; no projection is applied");

    if (fusion_dec)
        report.warnings.push_back(
            "decoder fusion: the teacher sees only the generated prefix at inference; its "
            "representation is incomplete and noisy");

    try {
        if (fusion_enc) report.encoder_fusion_layers = plan.fusion_layers.resolve(model.enc_depth);
        if (fusion_dec) report.decoder_fusion_layers = plan.fusion_layers.resolve(model.dec_depth);
        if (distill_enc)
            report.encoder_distill_layers = plan.distill_layers.resolve(model.enc_depth);
        if (distill_dec)
            report.decoder_distill_layers = plan.distill_layers.resolve(model.dec_depth);
    } catch (const ConfigError& e) {
        violate("layer_set", e.what());
    }
    if ((fusion_enc && plan.fusion_layers.kind == LayerSet::Kind::middle &&
         report.encoder_fusion_layers.empty()) ||
        (distill_dec && plan.distill_layers.kind == LayerSet::Kind::middle &&
         report.decoder_distill_layers.empty()))
        report.warnings.push_back("\"middle\" selector is empty at this depth");

    report.active_losses.push_back("l_t");
    if ((distill_enc || distill_dec) && !plan.ablations.no_sent_distill && plan.eta > 0.0)
        report.active_losses.push_back("l_s");
    if (distill_dec && !plan.ablations.no_word_distill && plan.beta > 0.0)
        report.active_losses.push_back("l_w");

    if (fusion_enc && teachers.encoder.present)
        report.fusion_params_added += fusion_param_count(teachers.encoder.cfg, model.d_model);
    if (fusion_dec && teachers.decoder.present)
        report.fusion_params_added += fusion_param_count(teachers.decoder.cfg, model.d_model);

    report.valid = report.violations.empty();
    return report;
}

// ---- finetune ---------------------------------------------------------------------

namespace {

struct CopyJob {
    Tensor dst, src;
    std::string name;
};

void plan_layer_copy(std::vector<CopyJob>& jobs, const EncoderLayerParams& tl,
                     const AttentionParams& self_attn, const LayerNormParams& ln_self,
                     const FfnParams& ffn, const LayerNormParams& ln_ffn,
                     const std::string& prefix) {
    auto push = [&](Tensor dst, Tensor src, const std::string& nm) {
        jobs.push_back({std::move(dst), std::move(src), prefix + "." + nm});
    };
    push(self_attn.wq, tl.self_attn.wq, "self_attn.wq");
    push(self_attn.bq, tl.self_attn.bq, "self_attn.bq");
    push(self_attn.wk, tl.self_attn.wk, "self_attn.wk");
    push(self_attn.bk, tl.self_attn.bk, "self_attn.bk");
    push(self_attn.wv, tl.self_attn.wv, "self_attn.wv");
    push(self_attn.bv, tl.self_attn.bv, "self_attn.bv");
    push(self_attn.wo, tl.self_attn.wo, "self_attn.wo");
    push(self_attn.bo, tl.self_attn.bo, "self_attn.bo");
    push(ln_self.gain, tl.ln_attn.gain, "ln_self.gain");
    push(ln_self.bias, tl.ln_attn.bias, "ln_self.bias");
    push(ffn.w1, tl.ffn.w1, "ffn.w1");
    push(ffn.b1, tl.ffn.b1, "ffn.b1");
    push(ffn.w2, tl.ffn.w2, "ffn.w2");
    push(ffn.b2, tl.ffn.b2, "ffn.b2");
    push(ln_ffn.gain, tl.ln_ffn.gain, "ln_ffn.gain");
    push(ln_ffn.bias, tl.ln_ffn.bias, "ln_ffn.bias");
}

} // namespace

void apply_finetune(TransformerModel& student, const TeacherModel* encoder_teacher,
                    const TeacherModel* decoder_teacher) {
    if (!encoder_teacher && !decoder_teacher)
        throw ConfigError("apply_finetune: no teacher given");
    std::vector<CopyJob> jobs;
    if (encoder_teacher) {
        if (static_cast<int>(student.encoder.size()) != encoder_teacher->cfg.depth)
            throw ShapeError("apply_finetune: encoder depth " +
                             std::to_string(student.encoder.size()) + " vs teacher depth " +
                             std::to_string(encoder_teacher->cfg.depth));
        jobs.push_back({student.src_embed, encoder_teacher->embed, "src_embed"});
        for (std::size_t i = 0; i < student.encoder.size(); ++i) {
            auto& sl = student.encoder[i];
            plan_layer_copy(jobs, encoder_teacher->layers[i], sl.self_attn, sl.ln_attn, sl.ffn,
                            sl.ln_ffn, "encoder." + std::to_string(i));
        }
    }
    if (decoder_teacher) {
        if (static_cast<int>(student.decoder.size()) != decoder_teacher->cfg.depth)
            throw ShapeError("apply_finetune: decoder depth " +
                             std::to_string(student.decoder.size()) + " vs teacher depth " +
                             std::to_string(decoder_teacher->cfg.depth));
        jobs.push_back({student.tgt_embed, decoder_teacher->embed, "tgt_embed"});
        for (std::size_t i = 0; i < student.decoder.size(); ++i) {
            auto& sl = student.decoder[i];
            plan_layer_copy(jobs, decoder_teacher->layers[i], sl.self_attn, sl.ln_self, sl.ffn,
                            sl.ln_ffn, "decoder." + std::to_string(i));
        }
    }
    // validate everything before touching the student
    for (const auto& job : jobs)
        if (job.dst.shape() != job.src.shape())
            throw ShapeError("apply_finetune: shape mismatch at " + job.name + ": student " +
                             shape_str(job.dst.shape()) + " vs teacher " +
                             shape_str(job.src.shape()));
    for (auto& job : jobs) {
        Tensor dst = job.dst;
        dst.leaf_values() = job.src.values();
        dst.enforce_dtype();
    }
}

// ---- training step -------------------------------------------------------------------

ParamList StudentModel::named_params() const {
    ParamList out;
    append_params(out, "model", nmt.named_params());
    if (enc_fusion) append_params(out, "enc_fusion", enc_fusion->named_params());
    if (dec_fusion) append_params(out, "dec_fusion", dec_fusion->named_params());
    return out;
}

StudentModel build_student(const IntegrationPlan& plan, const ModelConfig& cfg,
                           const Teachers& teachers, Rng& rng, bool finetune_init) {
    StudentModel student;
    student.nmt = build_transformer(cfg, rng);
    if (plan.mode == PlanMode::apt && covers_encoder(plan.fusion_side)) {
        if (!teachers.encoder) throw ConfigError("build_student: encoder teacher missing");
        student.enc_fusion =
            build_fusion_bank(teachers.encoder->cfg.depth, teachers.encoder->cfg.d_model,
                              cfg.d_model, plan.fusion_layers.resolve(cfg.enc_depth), rng);
        student.enc_fusion->ablate_gating = plan.ablations.no_gating;
        student.enc_fusion->ablate_layer_attention = plan.ablations.no_layer_attention;
    }
    if (plan.mode == PlanMode::apt && covers_decoder(plan.fusion_side)) {
        if (!teachers.decoder) throw ConfigError("build_student: decoder teacher missing");
        student.dec_fusion =
            build_fusion_bank(teachers.decoder->cfg.depth, teachers.decoder->cfg.d_model,
                              cfg.d_model, plan.fusion_layers.resolve(cfg.dec_depth), rng);
        student.dec_fusion->ablate_gating = plan.ablations.no_gating;
        student.dec_fusion->ablate_layer_attention = plan.ablations.no_layer_attention;
    }
    const bool wants_finetune = plan.mode == PlanMode::finetune || finetune_init;
    if (wants_finetune) {
        const TeacherModel* enc_t = plan.encoder_teacher != "none" ? teachers.encoder.get()
                                                                   : nullptr;
        const TeacherModel* dec_t = plan.decoder_teacher != "none" ? teachers.decoder.get()
                                                                   : nullptr;
        if (plan.encoder_teacher != "none" && !enc_t)
            throw ConfigError("build_student: plan initializes the encoder but no teacher loaded");
        if (plan.decoder_teacher != "none" && !dec_t)
            throw ConfigError("build_student: plan initializes the decoder but no teacher loaded");
        apply_finetune(student.nmt, enc_t, dec_t);
    }
    return student;
}

TrainingStep::TrainingStep(const IntegrationPlan& plan, const ModelConfig& cfg,
                           StudentModel& student, Teachers teachers, int exact_cap)
    : plan_(plan), cfg_(cfg), student_(student), teachers_(std::move(teachers)),
      exact_cap_(exact_cap) {
    if (plan_.mode == PlanMode::apt) {
        if (covers_encoder(plan_.fusion_side))
            enc_fusion_layers_ = plan_.fusion_layers.resolve(cfg.enc_depth);
        if (covers_decoder(plan_.fusion_side))
            dec_fusion_layers_ = plan_.fusion_layers.resolve(cfg.dec_depth);
        if (covers_encoder(plan_.distill_side))
            enc_distill_layers_ = plan_.distill_layers.resolve(cfg.enc_depth);
        if (covers_decoder(plan_.distill_side))
            dec_distill_layers_ = plan_.distill_layers.resolve(cfg.dec_depth);
        word_active_ = covers_decoder(plan_.distill_side) && !plan_.ablations.no_word_distill &&
                       plan_.beta > 0.0;
        sent_active_ = (covers_encoder(plan_.distill_side) ||
                        covers_decoder(plan_.distill_side)) &&
                       !plan_.ablations.no_sent_distill && plan_.eta > 0.0;
        if (covers_encoder(plan_.fusion_side) && !student_.enc_fusion)
            throw ConfigError("training step: plan fuses the encoder but the student has no bank");
        if (covers_decoder(plan_.fusion_side) && !student_.dec_fusion)
            throw ConfigError("training step: plan fuses the decoder but the student has no bank");
    }
}

EncoderState TrainingStep::encode_source(const std::vector<int>& src, AttnProbe* probe) const {
    ForwardOptions opts;
    opts.probe = probe;
    if (!enc_fusion_layers_.empty())
        return fused_encode(student_.nmt, src, *teachers_.encoder, *student_.enc_fusion, opts);
    return encode(student_.nmt, src, opts);
}

DecodeResult TrainingStep::decode_prefix(const std::vector<int>& tgt_input,
                                         const EncoderState& enc, AttnProbe* probe) const {
    ForwardOptions opts;
    opts.probe = probe;
    if (!dec_fusion_layers_.empty())
        return fused_decode(student_.nmt, tgt_input, enc, *teachers_.decoder,
                            *student_.dec_fusion, opts);
    return decode(student_.nmt, tgt_input, enc, opts);
}

LossBundle TrainingStep::run(const SentencePair& pair, long cache_key,
                             const ForwardOptions& opts, FusionTrace* trace) {
    if (pair.src.empty() || pair.tgt.empty())
        throw InvalidInputError("training step: empty sentence");
    std::vector<int> tgt_input{Vocabulary::bos_id};
    tgt_input.insert(tgt_input.end(), pair.tgt.begin(), pair.tgt.end() - 1);

    // encoder pass
    EncoderState enc;
    if (!enc_fusion_layers_.empty()) {
        const std::vector<Tensor>* cached = nullptr;
        if (cache_key >= 0) {
            auto it = enc_rep_cache_.find(cache_key);
            if (it == enc_rep_cache_.end())
                it = enc_rep_cache_
                         .emplace(cache_key, teacher_representations(*teachers_.encoder, pair.src))
                         .first;
            cached = &it->second;
        }
        enc = fused_encode(student_.nmt, pair.src, *teachers_.encoder, *student_.enc_fusion, opts,
                           trace, cached);
    } else {
        enc = encode(student_.nmt, pair.src, opts);
    }

    // decoder pass
    DecodeResult dec;
    if (!dec_fusion_layers_.empty()) {
        const std::vector<Tensor>* cached = nullptr;
        if (cache_key >= 0) {
            auto it = dec_prefix_cache_.find(cache_key);
            if (it == dec_prefix_cache_.end()) {
                TeacherForward fwd = teacher_forward(*teachers_.decoder, tgt_input);
                std::vector<Tensor> reps;
                for (const auto& l : fwd.layers) reps.push_back(detach(l));
                it = dec_prefix_cache_.emplace(cache_key, std::move(reps)).first;
            }
            cached = &it->second;
        }
        dec = fused_decode(student_.nmt, tgt_input, enc, *teachers_.decoder, *student_.dec_fusion,
                           opts, trace, cached);
    } else {
        dec = decode(student_.nmt, tgt_input, enc, opts);
    }

    Tensor l_t = translation_loss(dec.logits, pair.tgt, cfg_.label_smoothing);
    if (plan_.mode != PlanMode::apt) return joint_loss(l_t, std::nullopt, std::nullopt, 0.0, 0.0);

    std::optional<Tensor> l_w, l_s;
    if (word_active_) {
        Tensor rows;
        auto it = cache_key >= 0 ? dec_dist_cache_.find(cache_key) : dec_dist_cache_.end();
        if (cache_key >= 0 && it != dec_dist_cache_.end()) {
            rows = it->second;
        } else {
            const DistMode mode = teachers_.decoder->cfg.kind == TeacherKind::masked
                                      ? DistMode::exact
                                      : DistMode::fast;
            rows = teacher_distribution(*teachers_.decoder, pair.tgt, mode, exact_cap_).rows;
            if (cache_key >= 0) dec_dist_cache_.emplace(cache_key, rows);
        }
        l_w = word_distill_loss(dec.logits, rows);
    }
    if (sent_active_) {
        auto reps_via = [&](std::unordered_map<long, std::vector<Tensor>>& cache,
                            const TeacherModel& teacher,
                            const std::vector<int>& seq) -> std::vector<Tensor> {
            if (cache_key < 0) return teacher_representations(teacher, seq);
            auto it = cache.find(cache_key);
            if (it == cache.end())
                it = cache.emplace(cache_key, teacher_representations(teacher, seq)).first;
            return it->second;
        };
        std::vector<Tensor> terms;
        if (!dec_distill_layers_.empty()) {
            auto reps = reps_via(dec_rep_cache_, *teachers_.decoder, pair.tgt);
            for (int n : dec_distill_layers_)
                terms.push_back(sent_distill_loss(dec.state.layers[static_cast<std::size_t>(n)],
                                                  reps.back()));
        }
        if (!enc_distill_layers_.empty()) {
            auto reps = reps_via(enc_rep_cache_, *teachers_.encoder, pair.src);
            for (int n : enc_distill_layers_)
                terms.push_back(
                    sent_distill_loss(enc.layers[static_cast<std::size_t>(n)], reps.back()));
        }
        if (!terms.empty()) l_s = mean_of(terms);
    }
    return joint_loss(l_t, l_s, l_w, plan_.eta, plan_.beta);
}

std::unique_ptr<TrainingStep> build_training_step(const IntegrationPlan& plan,
                                                  const ModelConfig& cfg, StudentModel& student,
                                                  Teachers teachers, int exact_cap) {
    return std::make_unique<TrainingStep>(plan, cfg, student, std::move(teachers), exact_cap);
}

} // namespace apt
