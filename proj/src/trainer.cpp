#include "apt/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace apt {

nlohmann::json TrainerConfig::to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"warmup_steps", warmup_steps},
            {"lr_scale", lr_scale},
            {"grad_clip", grad_clip},
            {"max_steps", max_steps},
            {"max_len", max_len},
            {"valid_beam", valid_beam},
            {"valid_limit", valid_limit},
            {"exact_cap", exact_cap},
            {"finetune_init", finetune_init}};
}

TrainerConfig TrainerConfig::from_json(const nlohmann::json& j) {
    reject_unknown_keys(j,
                        {"epochs", "batch_size", "warmup_steps", "lr_scale", "grad_clip",
                         "max_steps", "max_len", "valid_beam", "valid_limit", "exact_cap",
                         "finetune_init"},
                        "trainer");
    TrainerConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.lr_scale = j.value("lr_scale", c.lr_scale);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.max_len = j.value("max_len", c.max_len);
    c.valid_beam = j.value("valid_beam", c.valid_beam);
    c.valid_limit = j.value("valid_limit", c.valid_limit);
    c.exact_cap = j.value("exact_cap", c.exact_cap);
    c.finetune_init = j.value("finetune_init", c.finetune_init);
    return c;
}

// Callers must keep the step/model alive while the returned closures are in
// use; nothing is copied.
DecodingModel decoding_model(const TrainingStep& step) {
    DecodingModel m;
    m.tgt_vocab = step.config().tgt_vocab;
    m.max_len = step.config().max_len;
    m.begin = [&step](const std::vector<int>& src) -> DecodeSession {
        auto enc = std::make_shared<EncoderState>(step.encode_source(src));
        return [&step, enc](const std::vector<int>& tgt_input) {
            return step.decode_prefix(tgt_input, *enc).logits;
        };
    };
    return m;
}

DecodingModel decoding_model(const TransformerModel& model) {
    DecodingModel m;
    m.tgt_vocab = model.cfg.tgt_vocab;
    m.max_len = model.cfg.max_len;
    m.begin = [&model](const std::vector<int>& src) -> DecodeSession {
        auto enc = std::make_shared<EncoderState>(encode(model, src));
        return [&model, enc](const std::vector<int>& tgt_input) {
            return decode(model, tgt_input, *enc).logits;
        };
    };
    return m;
}

namespace {

std::vector<std::vector<std::string>> ids_as_tokens(const std::vector<std::vector<int>>& seqs) {
    std::vector<std::vector<std::string>> out;
    out.reserve(seqs.size());
    for (const auto& s : seqs) {
        std::vector<std::string> toks;
        for (int id : s)
            if (id != Vocabulary::eos_id) toks.push_back(std::to_string(id));
        out.push_back(std::move(toks));
    }
    return out;
}

} // namespace

double token_accuracy(const TrainingStep& step, const ParallelCorpus& corpus) {
    std::size_t hits = 0, total = 0;
    for (const auto& pair : corpus) {
        if (pair.src.empty() || pair.tgt.empty()) continue;
        EncoderState enc = step.encode_source(pair.src);
        std::vector<int> tgt_input{Vocabulary::bos_id};
        tgt_input.insert(tgt_input.end(), pair.tgt.begin(), pair.tgt.end() - 1);
        DecodeResult res = step.decode_prefix(tgt_input, enc);
        const std::size_t v = res.logits.cols();
        for (std::size_t j = 0; j < pair.tgt.size(); ++j) {
            const double* row = res.logits.values().data() + j * v;
            std::size_t best = 0;
            for (std::size_t k = 1; k < v; ++k)
                if (row[k] > row[best]) best = k;
            if (static_cast<int>(best) == pair.tgt[j]) ++hits;
            ++total;
        }
    }
    return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

TrainResult train(TrainingStep& step, const ParallelCorpus& train_corpus,
                  const ParallelCorpus& valid_corpus, const TrainerConfig& cfg,
                  std::uint64_t seed, const MetricSink& sink, AttnProbe* probe, int probe_every) {
    if (train_corpus.empty()) throw InvalidInputError("train: empty corpus");
    TrainResult result;
    Rng root(seed);
    Rng order_rng = root.fork(1);
    Rng dropout_rng = root.fork(2);

    StudentModel& student = step.student();
    ParamList params = student.named_params();

    AdamConfig ac;
    ac.warmup_steps = cfg.warmup_steps;
    ac.d_model = student.nmt.cfg.d_model;
    ac.lr_scale = cfg.lr_scale;
    ac.grad_clip = cfg.grad_clip;
    AdamOptimizer opt(params, ac);

    BatchResult batched = make_batches(train_corpus, cfg.batch_size, cfg.max_len);
    if (batched.batches.empty()) throw InvalidInputError("train: no usable batches");

    // snapshot/restore for best-epoch selection and abort recovery
    auto snapshot = [&params]() {
        std::vector<std::vector<double>> vals;
        vals.reserve(params.size());
        for (const auto& p : params) vals.push_back(p.tensor.values());
        return vals;
    };
    auto restore = [&params](const std::vector<std::vector<double>>& vals) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor t = params[i].tensor;
            t.leaf_values() = vals[i];
            t.enforce_dtype();
        }
    };
    std::vector<std::vector<double>> best = snapshot();

    const double dropout = student.nmt.cfg.dropout;
    bool done = false;
    for (int epoch = 1; epoch <= cfg.epochs && !done; ++epoch) {
        std::vector<std::size_t> order(batched.batches.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        order_rng.shuffle(order);

        for (std::size_t bi : order) {
            const Batch& batch = batched.batches[bi];
            zero_grads(params);
            std::vector<Tensor> l_t, l_s, l_w, totals;
            ForwardOptions opts;
            opts.dropout = dropout;
            opts.rng = &dropout_rng;
            const bool probing = probe && probe_every > 0 &&
                                 (result.steps % probe_every == 0);
            if (probing) opts.probe = probe;
            FusionTrace trace;
            try {
                for (std::size_t i = 0; i < batch.index.size(); ++i) {
                    const SentencePair& pair = train_corpus[batch.index[i]];
                    LossBundle bundle =
                        step.run(pair, static_cast<long>(batch.index[i]), opts,
                                 probing ? &trace : nullptr);
                    l_t.push_back(bundle.l_t);
                    l_s.push_back(bundle.l_s);
                    l_w.push_back(bundle.l_w);
                    totals.push_back(bundle.total);
                }
                Tensor loss = mean_of(totals);
                backward(loss);
            } catch (const NumericError& e) {
                restore(best);
                result.aborted = true;
                result.abort_reason = e.what();
                if (sink) sink({{"aborted", true}, {"reason", e.what()}});
                return result;
            }
            if (probing && probe) {
                probe->max_alpha_dev = std::max(probe->max_alpha_dev, trace.max_alpha_dev());
                probe->alpha_vectors += trace.layers.size();
            }
            auto info = opt.step();
            if (info.skipped) ++result.skipped_steps;
            ++result.steps;
            if (sink) {
                sink({{"step", result.steps},
                      {"l_t", mean_of(l_t).item()},
                      {"l_s", mean_of(l_s).item()},
                      {"l_w", mean_of(l_w).item()},
                      {"total", mean_of(totals).item()},
                      {"lr", info.lr}});
            }
            if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) {
                done = true;
                break;
            }
        }

        // validation: plan loss + greedy/beam BLEU on subword sequences
        double vloss = 0.0;
        std::size_t vcount = 0;
        for (std::size_t i = 0; i < valid_corpus.size(); ++i) {
            const auto& pair = valid_corpus[i];
            if (pair.src.empty() || pair.tgt.empty()) continue;
            vloss += step.run(pair, 1000000000L + static_cast<long>(i), {}).combined();
            ++vcount;
        }
        vloss = vcount ? vloss / static_cast<double>(vcount) : 0.0;

        DecodingModel dm = decoding_model(step);
        const std::size_t limit = cfg.valid_limit > 0
                                      ? std::min<std::size_t>(valid_corpus.size(),
                                                              static_cast<std::size_t>(
                                                                  cfg.valid_limit))
                                      : valid_corpus.size();
        std::vector<std::vector<int>> hyp_ids, ref_ids;
        for (std::size_t i = 0; i < limit; ++i) {
            Hypothesis h = beam_search(dm, valid_corpus[i].src, cfg.valid_beam,
                                       student.nmt.cfg.max_len - 1);
            hyp_ids.push_back(h.tokens);
            ref_ids.push_back(valid_corpus[i].tgt);
        }
        const double vbleu =
            hyp_ids.empty() ? 0.0 : bleu_tokens(ids_as_tokens(hyp_ids), ids_as_tokens(ref_ids))
                                        .score;

        EpochRecord rec{epoch, vbleu, vloss};
        result.epochs.push_back(rec);
        if (sink)
            sink({{"epoch", epoch}, {"valid_bleu", vbleu}, {"valid_loss", vloss}});
        if (vbleu > result.best_bleu) {
            result.best_bleu = vbleu;
            result.best_epoch = epoch;
            best = snapshot();
        }
    }
    restore(best);
    return result;
}

// ---- gradcheck ------------------------------------------------------------------------

GradCheckReport gradcheck(const IntegrationPlan& plan, std::uint64_t seed,
                          std::size_t min_coords) {
    const auto t0 = std::chrono::steady_clock::now();
    DtypeGuard guard(Dtype::f64);

    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.enc_depth = 2;
    cfg.dec_depth = 2;
    cfg.d_ff = 16;
    cfg.src_vocab = 16;
    cfg.tgt_vocab = 16;
    cfg.dropout = 0.0;
    cfg.label_smoothing = 0.1;
    cfg.max_len = 12;

    Rng root(seed);
    Rng teacher_rng = root.fork(1);
    Rng student_rng = root.fork(2);
    Rng jitter_rng = root.fork(3);
    Rng pick_rng = root.fork(4);

    Teachers teachers;
    {
        TeacherConfig tc;
        tc.depth = 2;
        tc.d_model = 8;
        tc.n_heads = 2;
        tc.d_ff = 16;
        tc.vocab = 16;
        tc.max_len = 12;
        tc.dropout = 0.0;
        if (plan.needs_encoder_teacher()) {
            TeacherConfig ec = tc;
            ec.kind = plan.encoder_teacher == "masked" ? TeacherKind::masked : TeacherKind::causal;
            ec.language = "src";
            teachers.encoder = std::make_shared<TeacherModel>(build_teacher(ec, teacher_rng));
            teachers.encoder->freeze();
        }
        if (plan.needs_decoder_teacher()) {
            TeacherConfig dc = tc;
            dc.kind = plan.decoder_teacher == "masked" ? TeacherKind::masked : TeacherKind::causal;
            dc.language = "tgt";
            teachers.decoder = std::make_shared<TeacherModel>(build_teacher(dc, teacher_rng));
            teachers.decoder->freeze();
        }
    }

    StudentModel student = build_student(plan, cfg, teachers, student_rng, false);
    ParamList params = student.named_params();
    // move off structured points (zero-init adapters) so gradients are generic
    for (const auto& p : params) {
        Tensor t = p.tensor;
        for (double& v : t.leaf_values()) v += jitter_rng.normal(0.0, 0.02);
    }

    TrainingStep step(plan, cfg, student, teachers, 64);
    const std::vector<SentencePair> batch{{{5, 9, 12, 2}, {6, 11, 2}},
                                          {{7, 8, 2}, {10, 13, 5, 2}}};
    auto make_loss = [&]() {
        std::vector<Tensor> totals;
        for (const auto& pair : batch) totals.push_back(step.run(pair, -1, {}).total);
        return mean_of(totals);
    };

    zero_grads(params);
    Tensor loss = make_loss();
    backward(loss);

    GradCheckReport report;
    // smallest per-parameter quota whose plan reaches min_coords (tiny bias
    // tensors contribute fewer samples than the quota)
    std::size_t per_param = std::max<std::size_t>(1, min_coords / params.size());
    auto planned = [&]() {
        std::size_t c = 0;
        for (const auto& p : params) c += std::min(per_param, p.tensor.size());
        return c;
    };
    std::size_t capacity = 0;
    for (const auto& p : params) capacity += p.tensor.size();
    while (planned() < std::min(min_coords, capacity)) ++per_param;
    const double h = 1e-5;
    for (const auto& p : params) {
        Tensor t = p.tensor;
        GradCheckGroup group;
        group.name = p.name;
        const std::size_t n = t.size();
        const bool has_grad = t.has_grad();
        for (std::size_t s = 0; s < std::min(per_param, n); ++s) {
            const std::size_t idx =
                n <= per_param ? s : static_cast<std::size_t>(pick_rng.next_u64() % n);
            const double analytic = has_grad ? t.grad()[idx] : 0.0;
            t.nudge(idx, h);
            const double up = make_loss().item();
            t.nudge(idx, -2.0 * h);
            const double down = make_loss().item();
            t.nudge(idx, h);
            const double fd = (up - down) / (2.0 * h);
            const double rel = std::abs(fd - analytic) /
                               std::max({std::abs(fd), std::abs(analytic), 1e-3});
            group.max_rel_err = std::max(group.max_rel_err, rel);
            ++group.coords;
        }
        report.max_rel_err = std::max(report.max_rel_err, group.max_rel_err);
        report.coords += group.coords;
        report.groups.push_back(std::move(group));
    }
    report.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

nlohmann::json GradCheckReport::to_json() const {
    nlohmann::json groups_json = nlohmann::json::array();
    for (const auto& g : groups)
        groups_json.push_back(
            {{"name", g.name}, {"max_rel_err", g.max_rel_err}, {"coords", g.coords}});
    return {{"max_rel_err", max_rel_err},
            {"coords", coords},
            {"seconds", seconds},
            {"groups", groups_json}};
}

} // namespace apt
