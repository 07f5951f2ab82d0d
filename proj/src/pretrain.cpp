#include "apt/pretrain.hpp"

#include <algorithm>
#include <cmath>

#include "apt/model_config.hpp"

namespace apt {

const char* teacher_kind_name(TeacherKind k) {
    return k == TeacherKind::causal ? "causal" : "masked";
}

TeacherKind teacher_kind_from_name(const std::string& name) {
    if (name == "causal") return TeacherKind::causal;
    if (name == "masked") return TeacherKind::masked;
    throw ConfigError("unknown teacher kind: " + name);
}

void TeacherConfig::validate() const {
    if (depth < 1) throw ConfigError("teacher: depth must be >= 1");
    if (d_model < 2 || d_model % 2 != 0 || n_heads < 1 || d_model % n_heads != 0)
        throw ConfigError("teacher: d_model must be an even multiple of n_heads");
    if (d_ff < 1) throw ConfigError("teacher: d_ff must be positive");
    if (vocab < 6) throw ConfigError("teacher: vocabulary must cover the reserved ids");
    if (language != "src" && language != "tgt")
        throw ConfigError("teacher: language must be \"src\" or \"tgt\"");
    if (max_len < 1) throw ConfigError("teacher: max_len must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("teacher: dropout must be in [0,1)");
}

nlohmann::json TeacherConfig::to_json() const {
    return {{"kind", teacher_kind_name(kind)},
            {"depth", depth},
            {"d_model", d_model},
            {"n_heads", n_heads},
            {"d_ff", d_ff},
            {"vocab", vocab},
            {"language", language},
            {"max_len", max_len},
            {"dropout", dropout}};
}

TeacherConfig TeacherConfig::from_json(const nlohmann::json& j) {
    reject_unknown_keys(j,
                        {"kind", "depth", "d_model", "n_heads", "d_ff", "vocab", "language",
                         "max_len", "dropout"},
                        "teacher");
    TeacherConfig c;
    if (j.contains("kind")) c.kind = teacher_kind_from_name(j.at("kind").get<std::string>());
    c.depth = j.value("depth", c.depth);
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.vocab = j.value("vocab", c.vocab);
    c.language = j.value("language", c.language);
    c.max_len = j.value("max_len", c.max_len);
    c.dropout = j.value("dropout", c.dropout);
    c.validate();
    return c;
}

ParamList TeacherModel::named_params() const {
    ParamList out{{"embed", embed}};
    for (std::size_t i = 0; i < layers.size(); ++i) {
        auto sub = layers[i].named("layers." + std::to_string(i));
        out.insert(out.end(), sub.begin(), sub.end());
    }
    out.push_back({"out_w", out_w});
    out.push_back({"out_b", out_b});
    return out;
}

void TeacherModel::freeze() {
    for (auto& p : named_params()) {
        Tensor t = p.tensor;
        t.set_requires_grad(false);
    }
}

bool TeacherModel::frozen() const {
    for (const auto& p : named_params())
        if (p.tensor.requires_grad()) return false;
    return true;
}

const Tensor& TeacherModel::positions() const {
    if (!pos_cache_.defined() || pos_cache_.dtype() != embed.dtype() ||
        pos_cache_.rows() != static_cast<std::size_t>(cfg.max_len))
        pos_cache_ = sinusoidal_positions(cfg.max_len, cfg.d_model, embed.dtype());
    return pos_cache_;
}

TeacherModel build_teacher(const TeacherConfig& cfg, Rng& rng) {
    cfg.validate();
    TeacherModel m;
    m.cfg = cfg;
    m.embed = normal_init({static_cast<std::size_t>(cfg.vocab),
                           static_cast<std::size_t>(cfg.d_model)},
                          1.0 / std::sqrt(static_cast<double>(cfg.d_model)), rng);
    for (int i = 0; i < cfg.depth; ++i)
        m.layers.push_back(build_encoder_layer(cfg.d_model, cfg.d_ff, rng));
    m.out_w = xavier_uniform(static_cast<std::size_t>(cfg.d_model),
                             static_cast<std::size_t>(cfg.vocab), rng);
    m.out_b = zeros_param({1, static_cast<std::size_t>(cfg.vocab)});
    return m;
}

TeacherForward teacher_forward(const TeacherModel& model, const std::vector<int>& input,
                               const ForwardOptions& opts) {
    if (input.empty() || static_cast<int>(input.size()) > model.cfg.max_len)
        throw InvalidInputError("teacher_forward: length must be in [1, max_len]");
    for (int t : input)
        if (t < 0 || t >= model.cfg.vocab)
            throw VocabError("teacher_forward: token id outside teacher vocabulary");
    ++model.forward_calls;

    TeacherForward out;
    Tensor x = mul_scalar(embedding_lookup(model.embed, input),
                          std::sqrt(static_cast<double>(model.cfg.d_model)));
    x = add(x, slice_rows(model.positions(), 0, input.size()));
    x = apply_dropout(x, opts.dropout, opts.rng);
    out.embedded = x;

    Tensor mask;
    const bool causal = model.cfg.kind == TeacherKind::causal;
    if (causal) mask = causal_mask(input.size(), x.dtype());
    for (const auto& layer : model.layers) {
        x = encoder_layer_forward(layer, model.cfg.n_heads, x, causal ? &mask : nullptr, opts);
        out.layers.push_back(x);
    }
    out.logits = add_row_vector(matmul(x, model.out_w), model.out_b);
    return out;
}

namespace {

std::vector<int> causal_input(const std::vector<int>& z) {
    std::vector<int> input{Vocabulary::bos_id};
    input.insert(input.end(), z.begin(), z.end() - 1);
    return input;
}

} // namespace

std::vector<Tensor> teacher_representations(const TeacherModel& model, const std::vector<int>& z) {
    if (z.empty()) throw InvalidInputError("teacher_representations: empty sequence");
    const std::vector<int> input =
        model.cfg.kind == TeacherKind::causal ? causal_input(z) : z;
    TeacherForward fwd = teacher_forward(model, input);
    std::vector<Tensor> out;
    out.reserve(fwd.layers.size());
    for (const auto& layer : fwd.layers) out.push_back(detach(layer));
    return out;
}

TeacherDistribution teacher_distribution(const TeacherModel& model, const std::vector<int>& y,
                                         DistMode mode, int exact_cap) {
    if (y.empty()) throw InvalidInputError("teacher_distribution: empty sequence");
    TeacherDistribution result;
    if (model.cfg.kind == TeacherKind::causal) {
        TeacherForward fwd = teacher_forward(model, causal_input(y));
        result.rows = detach(softmax(fwd.logits, -1));
        return result;
    }
    if (mode == DistMode::fast) {
        TeacherForward fwd = teacher_forward(model, y);
        result.rows = detach(softmax(fwd.logits, -1));
        result.biased = true; // each row saw its own token
        return result;
    }
    if (static_cast<int>(y.size()) > exact_cap)
        throw BudgetError("teacher_distribution: exact mode over " + std::to_string(y.size()) +
                          " slots exceeds cap " + std::to_string(exact_cap));
    std::vector<Tensor> rows;
    rows.reserve(y.size());
    for (std::size_t j = 0; j < y.size(); ++j) {
        std::vector<int> masked = y;
        masked[j] = Vocabulary::mask_id;
        TeacherForward fwd = teacher_forward(model, masked);
        rows.push_back(slice_rows(softmax(fwd.logits, -1), j, 1));
    }
    result.rows = detach(concat_rows(rows));
    return result;
}

// ---- masking ---------------------------------------------------------------------

MaskingPlan sample_masking_plan(std::size_t len, double rate, Rng& rng) {
    if (len == 0) throw InvalidInputError("sample_masking_plan: empty sentence");
    if (rate <= 0.0 || rate >= 1.0)
        throw InvalidInputError("sample_masking_plan: rate must be in (0,1)");
    MaskingPlan plan;
    for (std::size_t i = 0; i < len; ++i)
        if (rng.uniform() < rate) plan.positions.push_back(i);
    if (plan.positions.empty())
        plan.positions.push_back(static_cast<std::size_t>(rng.uniform_int(0, int(len) - 1)));
    for (std::size_t i = 0; i < plan.positions.size(); ++i) {
        const double u = rng.uniform();
        plan.actions.push_back(u < 0.8   ? MaskAction::mask_token
                               : u < 0.9 ? MaskAction::random_token
                                         : MaskAction::keep);
    }
    return plan;
}

std::vector<int> apply_masking(const std::vector<int>& ids, const MaskingPlan& plan, int vocab,
                               Rng& rng) {
    if (vocab <= Vocabulary::first_regular_id)
        throw InvalidInputError("apply_masking: vocabulary has no regular ids");
    std::vector<int> out = ids;
    for (std::size_t i = 0; i < plan.positions.size(); ++i) {
        const std::size_t pos = plan.positions[i];
        if (pos >= out.size()) throw InvalidInputError("apply_masking: position out of range");
        switch (plan.actions[i]) {
        case MaskAction::mask_token: out[pos] = Vocabulary::mask_id; break;
        case MaskAction::random_token:
            out[pos] = rng.uniform_int(Vocabulary::first_regular_id, vocab - 1);
            break;
        case MaskAction::keep: break;
        }
    }
    return out;
}

// ---- pre-training ------------------------------------------------------------------

nlohmann::json PretrainConfig::to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"warmup_steps", warmup_steps},
            {"lr_scale", lr_scale},
            {"max_steps", max_steps},
            {"grad_clip", grad_clip},
            {"mask_rate", mask_rate}};
}

PretrainConfig PretrainConfig::from_json(const nlohmann::json& j) {
    reject_unknown_keys(j,
                        {"epochs", "batch_size", "warmup_steps", "lr_scale", "max_steps",
                         "grad_clip", "mask_rate"},
                        "pretrain");
    PretrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.lr_scale = j.value("lr_scale", c.lr_scale);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.mask_rate = j.value("mask_rate", c.mask_rate);
    return c;
}

namespace {

struct SentenceLoss {
    Tensor loss;      // token-mean, for optimization
    double nll_sum;   // summed NLL over predicted slots, for perplexity
    std::size_t slots;
};

SentenceLoss causal_sentence_loss(const TeacherModel& model, const std::vector<int>& z,
                                  const ForwardOptions& opts) {
    TeacherForward fwd = teacher_forward(model, causal_input(z), opts);
    Tensor loss = cross_entropy_smoothed(fwd.logits, z, 0.0);
    return {loss, loss.item() * static_cast<double>(z.size()), z.size()};
}

SentenceLoss masked_sentence_loss(const TeacherModel& model, const std::vector<int>& z,
                                  double rate, Rng& mask_rng, const ForwardOptions& opts) {
    MaskingPlan plan = sample_masking_plan(z.size(), rate, mask_rng);
    std::vector<int> corrupted = apply_masking(z, plan, model.cfg.vocab, mask_rng);
    std::vector<double> weights(z.size(), 0.0);
    for (std::size_t pos : plan.positions) weights[pos] = 1.0;
    TeacherForward fwd = teacher_forward(model, corrupted, opts);
    Tensor loss = cross_entropy_smoothed(fwd.logits, z, 0.0, &weights);
    return {loss, loss.item() * static_cast<double>(plan.positions.size()),
            plan.positions.size()};
}

PretrainResult pretrain_lm(const MonoCorpus& train, const MonoCorpus& valid,
                           const TeacherConfig& cfg, const PretrainConfig& tc, std::uint64_t seed,
                           const PretrainMetricSink& sink, bool masked) {
    if (train.empty()) throw InvalidInputError("pretrain: empty corpus");
    cfg.validate();
    Rng root(seed);
    Rng init_rng = root.fork(1);
    Rng order_rng = root.fork(2);
    Rng dropout_rng = root.fork(3);
    Rng mask_rng = root.fork(4);

    PretrainResult result;
    result.model = build_teacher(cfg, init_rng);
    TeacherModel& model = result.model;

    AdamConfig ac;
    ac.warmup_steps = tc.warmup_steps;
    ac.d_model = cfg.d_model;
    ac.lr_scale = tc.lr_scale;
    ac.grad_clip = tc.grad_clip;
    AdamOptimizer opt(model.named_params(), ac);

    // skip sentences the model cannot ingest
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < train.size(); ++i)
        if (!train[i].empty() && static_cast<int>(train[i].size()) <= cfg.max_len)
            usable.push_back(i);
    if (usable.empty()) throw InvalidInputError("pretrain: no usable sentences under max_len");

    const std::size_t bs = static_cast<std::size_t>(std::max(1, tc.batch_size));
    bool done = false;
    for (int epoch = 1; epoch <= tc.epochs && !done; ++epoch) {
        order_rng.shuffle(usable);
        for (std::size_t at = 0; at < usable.size() && !done; at += bs) {
            const std::size_t end = std::min(usable.size(), at + bs);
            zero_grads(opt.params());
            std::vector<Tensor> losses;
            ForwardOptions opts;
            opts.dropout = cfg.dropout;
            opts.rng = &dropout_rng;
            for (std::size_t i = at; i < end; ++i) {
                const auto& z = train[usable[i]];
                SentenceLoss sl = masked
                                      ? masked_sentence_loss(model, z, tc.mask_rate, mask_rng, opts)
                                      : causal_sentence_loss(model, z, opts);
                losses.push_back(sl.loss);
            }
            backward(mean_of(losses));
            opt.step();
            ++result.steps;
            if (tc.max_steps > 0 && result.steps >= tc.max_steps) done = true;
        }
        // held-out metrics
        double nll = 0.0;
        std::size_t slots = 0;
        Rng valid_mask_rng(seed ^ 0x5eedbeefULL); // fixed masking across epochs
        for (const auto& z : valid) {
            if (z.empty() || static_cast<int>(z.size()) > cfg.max_len) continue;
            SentenceLoss sl = masked
                                  ? masked_sentence_loss(model, z, tc.mask_rate, valid_mask_rng, {})
                                  : causal_sentence_loss(model, z, {});
            nll += sl.nll_sum;
            slots += sl.slots;
        }
        PretrainEpoch ep;
        ep.epoch = epoch;
        ep.valid_loss = slots ? nll / static_cast<double>(slots) : 0.0;
        ep.valid_ppl = std::exp(ep.valid_loss);
        result.epochs.push_back(ep);
        if (sink)
            sink({{"epoch", ep.epoch}, {"valid_ppl", ep.valid_ppl}, {"valid_loss", ep.valid_loss}});
    }
    return result;
}

} // namespace

PretrainResult pretrain_causal(const MonoCorpus& train, const MonoCorpus& valid,
                               const TeacherConfig& cfg, const PretrainConfig& train_cfg,
                               std::uint64_t seed, const PretrainMetricSink& sink) {
    TeacherConfig c = cfg;
    c.kind = TeacherKind::causal;
    return pretrain_lm(train, valid, c, train_cfg, seed, sink, false);
}

PretrainResult pretrain_masked(const MonoCorpus& train, const MonoCorpus& valid,
                               const TeacherConfig& cfg, const PretrainConfig& train_cfg,
                               std::uint64_t seed, const PretrainMetricSink& sink) {
    TeacherConfig c = cfg;
    c.kind = TeacherKind::masked;
    return pretrain_lm(train, valid, c, train_cfg, seed, sink, true);
}

double causal_perplexity(const TeacherModel& model, const MonoCorpus& corpus) {
    if (model.cfg.kind != TeacherKind::causal)
        throw InvalidInputError("causal_perplexity: teacher is not causal");
    double nll = 0.0;
    std::size_t slots = 0;
    for (const auto& z : corpus) {
        if (z.empty() || static_cast<int>(z.size()) > model.cfg.max_len) continue;
        SentenceLoss sl = causal_sentence_loss(model, z, {});
        nll += sl.nll_sum;
        slots += sl.slots;
    }
    if (slots == 0) throw InvalidInputError("causal_perplexity: no usable sentences");
    return std::exp(nll / static_cast<double>(slots));
}

double masked_token_accuracy(const TeacherModel& model, const MonoCorpus& corpus, double rate,
                             std::uint64_t seed) {
    Rng rng(seed);
    std::size_t hits = 0, total = 0;
    for (const auto& z : corpus) {
        if (z.empty() || static_cast<int>(z.size()) > model.cfg.max_len) continue;
        MaskingPlan plan = sample_masking_plan(z.size(), rate, rng);
        std::vector<int> corrupted = apply_masking(z, plan, model.cfg.vocab, rng);
        TeacherForward fwd = teacher_forward(model, corrupted);
        const std::size_t v = fwd.logits.cols();
        for (std::size_t pos : plan.positions) {
            const double* row = fwd.logits.values().data() + pos * v;
            std::size_t best = 0;
            for (std::size_t k = 1; k < v; ++k)
                if (row[k] > row[best]) best = k;
            if (static_cast<int>(best) == z[pos]) ++hits;
            ++total;
        }
    }
    if (total == 0) throw InvalidInputError("masked_token_accuracy: no masked positions");
    return static_cast<double>(hits) / static_cast<double>(total);
}

} // namespace apt
