// Acceptance suite: one pass/fail line per criterion. Library-level checks
// run in-process; everything phrased against the command-line interface runs
// the real binary through subprocesses inside a scratch directory.
//
// Usage: apt_acceptance --cli <path-to-aptnmt> --workdir <scratch-dir>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "apt/ablation.hpp"
#include "apt/checkpoint.hpp"
#include "apt/run_config.hpp"

namespace fs = std::filesystem;
using namespace apt;
using nlohmann::json;

namespace {

struct Criterion {
    std::string name;
    bool passed = false;
    std::string detail;
};

std::vector<Criterion> g_results;

void report(const std::string& name, bool passed, const std::string& detail) {
    g_results.push_back({name, passed, detail});
    std::cout << (passed ? "[PASS] " : "[FAIL] ") << name << " — " << detail << std::endl;
}

std::string g_cli;
fs::path g_work;

// Desk-scale experiment calibration (recorded in the project README): the
// paper's eta/beta defaults assume WMT-scale training where the translation
// loss stays high; on the small synthetic task the auxiliary losses must be
// scaled down or they swamp translation learning.
constexpr double kExperimentEta = 0.05;
constexpr double kExperimentBeta = 0.05;
constexpr int kExperimentEpochs = 15;

int run_cli(const std::string& args, const std::string& log_name) {
    const std::string log = (g_work / (log_name + ".log")).string();
    const std::string cmd = g_cli + " " + args + " > " + log + " 2>&1";
    return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read " + p.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& content) {
    std::ofstream out(p);
    out << content;
}

double last_double(const std::string& text, const std::string& key) {
    // scans a JSONL/console log for the last occurrence of "key": value
    const std::string needle = "\"" + key + "\":";
    auto pos = text.rfind(needle);
    if (pos == std::string::npos) throw InvalidInputError("no key " + key);
    return std::stod(text.substr(pos + needle.size()));
}

// ---- library-level criteria -------------------------------------------------------

void criterion_zero_knowledge() {
    ModelConfig cfg;
    cfg.d_model = 32;
    cfg.n_heads = 4;
    cfg.enc_depth = 2;
    cfg.dec_depth = 2;
    cfg.d_ff = 64;
    cfg.src_vocab = 40;
    cfg.tgt_vocab = 40;
    cfg.dropout = 0.0;
    cfg.max_len = 24;
    Rng rng(1);
    TransformerModel model = build_transformer(cfg, rng);
    TeacherConfig tc;
    tc.kind = TeacherKind::masked;
    tc.depth = 2;
    tc.d_model = 24;
    tc.n_heads = 2;
    tc.d_ff = 48;
    tc.vocab = 40;
    tc.language = "src";
    tc.max_len = 24;
    tc.dropout = 0.0;
    Rng trng(2);
    TeacherModel teacher = build_teacher(tc, trng);
    teacher.freeze();
    Rng brng(3);
    FusionBank bank = build_fusion_bank(2, 24, 32, {0, 1, 2}, brng);

    double worst = 0.0;
    bool bit_identical = true;
    Rng data_rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> x;
        const int len = data_rng.uniform_int(1, 12);
        for (int i = 0; i < len; ++i) x.push_back(data_rng.uniform_int(5, 39));
        EncoderState plain = encode(model, x);
        EncoderState fused = fused_encode(model, x, teacher, bank);
        for (std::size_t l = 0; l < plain.layers.size(); ++l)
            for (std::size_t i = 0; i < plain.layers[l].size(); ++i)
                worst = std::max(worst, std::abs(plain.layers[l].values()[i] -
                                                 fused.layers[l].values()[i]));
        FusionBank empty = bank;
        empty.attachment.clear();
        EncoderState detached = fused_encode(model, x, teacher, empty);
        for (std::size_t l = 0; l < plain.layers.size(); ++l)
            if (plain.layers[l].values() != detached.layers[l].values()) bit_identical = false;
    }
    std::ostringstream os;
    os << "zero-init max |delta| " << worst << " (tol 1e-6); empty attachment bit-identical: "
       << (bit_identical ? "yes" : "no");
    report("zero-knowledge identity", worst <= 1e-6 && bit_identical, os.str());
}

void criterion_distill_fixed_points() {
    DtypeGuard guard(Dtype::f64);
    Rng rng(7);
    bool ok = true;
    std::ostringstream os;

    Tensor x = normal_init({5, 8}, 1.0, rng);
    const double sent_self = sent_distill_loss(x, x).item();
    ok = ok && sent_self == 0.0;
    os << "sent(X,X)=" << sent_self;

    const std::size_t j = 6, v = 9;
    std::vector<double> lv(j * v);
    for (double& e : lv) e = rng.normal(0, 2);
    Tensor logits = Tensor::from_values({j, v}, lv);
    std::vector<int> ref;
    std::vector<double> onehot(j * v, 0.0);
    for (std::size_t r = 0; r < j; ++r) {
        ref.push_back(static_cast<int>(rng.next_u64() % v));
        onehot[r * v + static_cast<std::size_t>(ref.back())] = 1.0;
    }
    const double gap = std::abs(word_distill_loss(logits, Tensor::from_values({j, v}, onehot))
                                    .item() -
                                translation_loss(logits, ref, 0.0).item());
    ok = ok && gap <= 1e-7;
    os << "; |word(one-hot) - nll| = " << gap;

    // gradient superposition of the joint loss
    Tensor w = normal_init({3, 4}, 1.0, rng);
    Tensor target = detach(normal_init({3, 4}, 1.0, rng));
    Tensor dist = detach(softmax(normal_init({3, 4}, 1.0, rng), -1));
    auto part = [&](int which) {
        Tensor l_t = mean_all(mul(w, w));
        Tensor l_s = sent_distill_loss(w, target);
        Tensor l_w = word_distill_loss(w, dist);
        if (which == 0) return joint_loss(l_t, l_s, l_w, 0.5, 0.5).total;
        return which == 1 ? l_t : which == 2 ? l_s : l_w;
    };
    w.clear_grad();
    backward(part(0));
    std::vector<double> combined = w.grad();
    std::vector<double> expect(w.size(), 0.0);
    const double weights[] = {1.0, 0.5, 0.5};
    for (int c = 1; c <= 3; ++c) {
        w.clear_grad();
        backward(part(c));
        for (std::size_t i = 0; i < w.size(); ++i) expect[i] += weights[c - 1] * w.grad()[i];
    }
    double super = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i)
        super = std::max(super, std::abs(combined[i] - expect[i]));
    ok = ok && super <= 1e-6;
    os << "; superposition max |delta| = " << super;
    report("distillation fixed points", ok, os.str());
}

void criterion_beam_bleu_oracles() {
    bool ok = true;
    std::ostringstream os;

    // full-width beam vs exhaustive enumeration on a 2-step toy transformer
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.enc_depth = 1;
    cfg.dec_depth = 1;
    cfg.d_ff = 16;
    cfg.src_vocab = 8;
    cfg.tgt_vocab = 8;
    cfg.dropout = 0.0;
    cfg.max_len = 8;
    bool beam_ok = true;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        TransformerModel model = build_transformer(cfg, rng);
        DecodingModel dm = decoding_model(model);
        const std::vector<int> src{5, 6, 2};
        Hypothesis best = beam_search(dm, src, cfg.tgt_vocab, 2);

        auto logprob = [&](const std::vector<int>& seq) {
            DecodeSession session = dm.begin(src);
            double lp = 0.0;
            std::vector<int> input{Vocabulary::bos_id};
            for (int tok : seq) {
                Tensor logits = session(input);
                const std::size_t vv = logits.cols();
                const double* row = logits.values().data() + (logits.rows() - 1) * vv;
                double mx = row[0];
                for (std::size_t k = 1; k < vv; ++k) mx = std::max(mx, row[k]);
                double z = 0;
                for (std::size_t k = 0; k < vv; ++k) z += std::exp(row[k] - mx);
                lp += row[static_cast<std::size_t>(tok)] - mx - std::log(z);
                input.push_back(tok);
            }
            return lp;
        };
        double best_score = -1e300;
        std::vector<int> best_seq;
        auto consider = [&](const std::vector<int>& seq) {
            const double s = logprob(seq) / static_cast<double>(seq.size());
            if (s > best_score || (s == best_score &&
                                   std::lexicographical_compare(seq.begin(), seq.end(),
                                                                best_seq.begin(),
                                                                best_seq.end()))) {
                best_score = s;
                best_seq = seq;
            }
        };
        for (int a = 0; a < cfg.tgt_vocab; ++a) {
            if (a == Vocabulary::eos_id) {
                consider({a});
                continue;
            }
            for (int b = 0; b < cfg.tgt_vocab; ++b) consider({a, b});
        }
        if (best.tokens != best_seq) beam_ok = false;
    }
    ok = ok && beam_ok;
    os << "beam==exhaustive on 5 toy models: " << (beam_ok ? "yes" : "no");

    std::vector<std::string> corpus{"the cat sat on the mat today", "a b c d e f g"};
    const double self_bleu = bleu(corpus, corpus).score;
    ok = ok && self_bleu == 100.0;
    os << "; bleu(X,X)=" << self_bleu;

    const double p1 = bleu({"the the the the the the the"}, {"the cat is on the mat"})
                          .precisions[0];
    const double clip_gap = std::abs(p1 - 2.0 / 7.0);
    ok = ok && clip_gap <= 1e-9;
    os << "; |clip p1 - 2/7| = " << clip_gap;
    report("beam/BLEU oracles", ok, os.str());
}

// ---- CLI-level criteria -------------------------------------------------------------

json base_config(const std::string& data_dir, std::uint64_t seed) {
    return {{"seed", seed},
            {"model",
             {{"d_model", 64}, {"n_heads", 4}, {"enc_depth", 2}, {"dec_depth", 2}, {"d_ff", 128},
              {"src_vocab", 512}, {"tgt_vocab", 512}, {"dropout", 0.1},
              {"label_smoothing", 0.1}, {"max_len", 32}}},
            {"plan",
             {{"mode", "apt"}, {"fusion_side", "encoder"}, {"distill_side", "decoder"},
              {"encoder_teacher", "masked"}, {"decoder_teacher", "causal"},
              {"eta", kExperimentEta}, {"beta", kExperimentBeta}}},
            {"trainer",
             {{"epochs", kExperimentEpochs}, {"batch_size", 32}, {"warmup_steps", 400},
              {"valid_limit", 50}, {"max_len", 32}}},
            {"pretrain", {{"epochs", 2}, {"batch_size", 32}, {"warmup_steps", 400}}},
            {"teacher",
             {{"kind", "causal"}, {"depth", 2}, {"d_model", 64}, {"n_heads", 4}, {"d_ff", 128},
              {"language", "src"}, {"max_len", 32}, {"dropout", 0.1}}},
            {"data", {{"dir", data_dir}}},
            {"teachers",
             {{"encoder", (g_work / "masked_teacher.apt").string()},
              {"decoder", (g_work / "causal_teacher.apt").string()}}}};
}

void criterion_gradcheck() {
    json cfg = base_config((g_work / "data_full").string(), 1);
    cfg["plan"]["mode"] = "baseline";
    spit(g_work / "gc_base.json", cfg.dump(1));
    cfg["plan"]["mode"] = "apt";
    spit(g_work / "gc_apt.json", cfg.dump(1));

    const auto t0 = std::chrono::steady_clock::now();
    bool ok = run_cli("gradcheck " + (g_work / "gc_base.json").string(), "gc_base") == 0;
    ok = run_cli("gradcheck " + (g_work / "gc_apt.json").string(), "gc_apt") == 0 && ok;
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    double base_err = 1e9, apt_err = 1e9;
    try {
        base_err = last_double(slurp(g_work / "gc_base.log"), "max_rel_err");
        apt_err = last_double(slurp(g_work / "gc_apt.log"), "max_rel_err");
    } catch (...) {
        ok = false;
    }
    std::ostringstream os;
    os << "baseline max_rel_err " << base_err << ", full-apt " << apt_err
       << " (tol 1e-4), runtime " << secs << "s (< 120)";
    report("gradient integrity", ok && base_err <= 1e-4 && apt_err <= 1e-4 && secs < 120.0,
           os.str());
}

void criterion_normalization() {
    // one training epoch on the real task, probing every 10 steps
    RunConfig cfg = RunConfig::from_json(base_config((g_work / "data_full").string(), 1));
    Tokenizer src_tok = load_tokenizer(cfg.data, "src", cfg.model.src_vocab);
    Tokenizer tgt_tok = load_tokenizer(cfg.data, "tgt", cfg.model.tgt_vocab);
    ModelConfig mc = cfg.model;
    mc.src_vocab = src_tok.vocab.size();
    mc.tgt_vocab = tgt_tok.vocab.size();
    Teachers teachers;
    teachers.encoder = std::make_shared<TeacherModel>(load_teacher((g_work / "masked_teacher.apt").string()));
    teachers.decoder = std::make_shared<TeacherModel>(load_teacher((g_work / "causal_teacher.apt").string()));

    ParallelCorpus train_corpus = tokenize_parallel(read_lines(cfg.data.train_src()),
                                                    read_lines(cfg.data.train_tgt()), src_tok,
                                                    tgt_tok);
    ParallelCorpus valid_corpus = tokenize_parallel(read_lines(cfg.data.valid_src()),
                                                    read_lines(cfg.data.valid_tgt()), src_tok,
                                                    tgt_tok);
    IntegrationPlan plan = cfg.plan;
    Rng rng(1);
    StudentModel student = build_student(plan, mc, teachers, rng, false);
    TrainingStep step(plan, mc, student, teachers);
    TrainerConfig tc = cfg.trainer;
    tc.epochs = 1;
    tc.valid_limit = 5;
    AttnProbe probe;
    train(step, train_corpus, valid_corpus, tc, 1, nullptr, &probe, 10);

    std::ostringstream os;
    os << probe.attn_rows << " attention rows (max |sum-1| " << probe.max_attn_row_dev << "), "
       << probe.alpha_vectors << " alpha vectors (max |sum-1| " << probe.max_alpha_dev
       << "), tol 1e-6";
    report("softmax/attention normalization",
           probe.attn_rows > 0 && probe.alpha_vectors > 0 && probe.max_attn_row_dev <= 1e-6 &&
               probe.max_alpha_dev <= 1e-6,
           os.str());
}

void criterion_determinism() {
    json cfg = base_config((g_work / "data_full").string(), 5);
    cfg["plan"]["mode"] = "baseline";
    cfg["trainer"]["epochs"] = 2;
    cfg["trainer"]["valid_limit"] = 20;
    spit(g_work / "det.json", cfg.dump(1));
    const std::string m1 = (g_work / "det1.jsonl").string();
    const std::string m2 = (g_work / "det2.jsonl").string();
    bool ok = run_cli("train " + (g_work / "det.json").string() + " --mode baseline --out " +
                          (g_work / "det1.apt").string() + " --metrics " + m1,
                      "det1") == 0;
    ok = run_cli("train " + (g_work / "det.json").string() + " --mode baseline --out " +
                     (g_work / "det2.apt").string() + " --metrics " + m2,
                 "det2") == 0 &&
         ok;
    const bool identical = ok && slurp(m1) == slurp(m2) && !slurp(m1).empty();
    report("determinism", identical,
           identical ? "two cmd_train runs produced byte-identical metrics JSONL"
                     : "metric logs differ or a run failed");
}

void criterion_checkpoint_roundtrip() {
    // uses the checkpoint written by the determinism runs
    const std::string src = (g_work / "det1.apt").string();
    StudentCheckpoint ck = load_student(src);
    Teachers embedded{ck.enc_teacher, ck.dec_teacher};
    const std::string dst = (g_work / "det1_resaved.apt").string();
    save_student(dst, ck.student, ck.plan, embedded, ck.metadata);
    const bool identical = slurp(src) == slurp(dst);
    report("checkpoint round-trip", identical,
           identical ? "save -> load -> save is byte-identical" : "resaved bytes differ");
}

// ---- the directional experiment ------------------------------------------------------

struct RunScore {
    double bleu = 0.0;
    bool ok = false;
};

RunScore train_and_score(const std::string& tag, const std::string& mode, std::uint64_t seed) {
    json cfg = base_config((g_work / "data_full").string(), seed);
    spit(g_work / (tag + ".json"), cfg.dump(1));
    RunScore score;
    if (run_cli("train " + (g_work / (tag + ".json")).string() + " --mode " + mode + " --out " +
                    (g_work / (tag + ".apt")).string() + " --metrics " +
                    (g_work / (tag + ".jsonl")).string(),
                tag) != 0)
        return score;
    if (run_cli("translate " + (g_work / (tag + ".apt")).string() + " --input " +
                    (g_work / "data_full/test.src").string() + " --beam 4 --out " +
                    (g_work / (tag + ".hyp")).string(),
                tag + "_tr") != 0)
        return score;
    if (run_cli("evaluate --hyp " + (g_work / (tag + ".hyp")).string() + " --ref " +
                    (g_work / "data_full/test.tgt").string(),
                tag + "_ev") != 0)
        return score;
    try {
        score.bleu = last_double(slurp(g_work / (tag + "_ev.log")), "bleu");
        score.ok = true;
    } catch (...) {
    }
    return score;
}

void criterion_directional_experiment() {
    const auto t0 = std::chrono::steady_clock::now();

    const std::uint64_t enc_hash_before = file_hash((g_work / "masked_teacher.apt").string());
    const std::uint64_t dec_hash_before = file_hash((g_work / "causal_teacher.apt").string());

    bool all_ok = true;
    double base_sum = 0.0, apt_sum = 0.0;
    double base_seed1 = 0.0, apt_seed1 = 0.0;
    std::ostringstream os;
    for (std::uint64_t seed : {1, 2, 3}) {
        RunScore base = train_and_score("base_s" + std::to_string(seed), "baseline", seed);
        RunScore apt = train_and_score("apt_s" + std::to_string(seed), "apt", seed);
        all_ok = all_ok && base.ok && apt.ok;
        base_sum += base.bleu;
        apt_sum += apt.bleu;
        if (seed == 1) {
            base_seed1 = base.bleu;
            apt_seed1 = apt.bleu;
        }
        os << "s" << seed << " base " << base.bleu << " apt " << apt.bleu << "; ";
    }
    RunScore ft = train_and_score("finetune_s1", "finetune", 1);
    all_ok = all_ok && ft.ok;
    os << "finetune " << ft.bleu << "; ";

    const double base_mean = base_sum / 3.0, apt_mean = apt_sum / 3.0;
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    os << "means base " << base_mean << " apt " << apt_mean << "; " << secs << "s";

    const bool hard_gate = apt_seed1 >= base_seed1 - 0.5;
    const bool directional = apt_mean > base_mean;
    report("directional synthetic experiment", all_ok && hard_gate && directional, os.str());

    const bool frozen = file_hash((g_work / "masked_teacher.apt").string()) == enc_hash_before &&
                        file_hash((g_work / "causal_teacher.apt").string()) == dec_hash_before;
    report("teacher-frozen contract", frozen,
           frozen ? "teacher checkpoint hashes unchanged after all student training"
                  : "teacher checkpoint bytes changed");
}

void criterion_ablation_suite() {
    // ablate.json is prepared by main() with the small-task teachers
    const std::string out_dir = (g_work / "ablate_out").string();
    bool ok = run_cli("ablate " + (g_work / "ablate.json").string() + " --suite table5 --out " +
                          out_dir,
                      "ablate") == 0;

    std::size_t rows = 0;
    bool all_have_bleu = true;
    double baseline_delta = -1.0;
    if (ok) {
        std::ifstream csv(out_dir + "/summary.csv");
        std::string line;
        std::getline(csv, line); // header
        while (std::getline(csv, line)) {
            if (line.empty()) continue;
            ++rows;
            std::stringstream ss(line);
            std::string name, bleu_s, delta_s;
            std::getline(ss, name, ',');
            std::getline(ss, bleu_s, ',');
            std::getline(ss, delta_s, ',');
            if (bleu_s == "failed") all_have_bleu = false;
            if (name == "baseline") baseline_delta = std::stod(delta_s);
        }
    }
    std::ostringstream os;
    os << rows << " cells (want 7), all completed: " << (all_have_bleu ? "yes" : "no")
       << ", baseline delta " << baseline_delta;
    report("ablation suite mechanics", ok && rows == 7 && all_have_bleu && baseline_delta == 0.0,
           os.str());
}

} // namespace

int main(int argc, char** argv) {
    std::string workdir = "acceptance_work";
    for (int i = 1; i + 1 < argc; i += 2) {
        const std::string flag = argv[i];
        if (flag == "--cli") g_cli = argv[i + 1];
        if (flag == "--workdir") workdir = argv[i + 1];
    }
    if (g_cli.empty()) {
        std::cerr << "usage: apt_acceptance --cli <aptnmt binary> --workdir <dir>\n";
        return 2;
    }
    g_work = fs::absolute(workdir);
    fs::remove_all(g_work);
    fs::create_directories(g_work);

    try {
        criterion_zero_knowledge();
        criterion_distill_fixed_points();
        criterion_beam_bleu_oracles();

        // data for everything CLI-driven
        spit(g_work / "task_full.json", json{{"seed", 1},
                                             {"vocab_words", 48},
                                             {"branching", 4},
                                             {"window", 2},
                                             {"min_len", 3},
                                             {"max_len", 10},
                                             {"parallel_pairs", 2000},
                                             {"valid_pairs", 200},
                                             {"test_pairs", 200},
                                             {"mono_source", 50000},
                                             {"mono_target", 50000},
                                             {"bpe_merges", 70}}
                                            .dump(1));
        spit(g_work / "task_small.json", json{{"seed", 2},
                                              {"vocab_words", 32},
                                              {"branching", 4},
                                              {"window", 2},
                                              {"min_len", 3},
                                              {"max_len", 9},
                                              {"parallel_pairs", 400},
                                              {"valid_pairs", 64},
                                              {"test_pairs", 64},
                                              {"mono_source", 4000},
                                              {"mono_target", 4000},
                                              {"bpe_merges", 60}}
                                             .dump(1));
        if (run_cli("datagen " + (g_work / "task_full.json").string() + " " +
                        (g_work / "data_full").string(),
                    "datagen_full") != 0 ||
            run_cli("datagen " + (g_work / "task_small.json").string() + " " +
                        (g_work / "data_small").string(),
                    "datagen_small") != 0)
            throw IoError("datagen failed; see logs in " + g_work.string());

        criterion_gradcheck();

        // teachers for the full task
        json pcfg = base_config((g_work / "data_full").string(), 1);
        spit(g_work / "pretrain.json", pcfg.dump(1));
        if (run_cli("pretrain " + (g_work / "pretrain.json").string() + " " +
                        (g_work / "data_full/mono.tgt").string() + " --objective causal --out " +
                        (g_work / "causal_teacher.apt").string(),
                    "pretrain_causal") != 0 ||
            run_cli("pretrain " + (g_work / "pretrain.json").string() + " " +
                        (g_work / "data_full/mono.src").string() + " --objective masked --out " +
                        (g_work / "masked_teacher.apt").string(),
                    "pretrain_masked") != 0)
            throw IoError("teacher pretraining failed; see logs in " + g_work.string());

        criterion_normalization();
        criterion_determinism();
        criterion_checkpoint_roundtrip();
        criterion_directional_experiment();

        // small-task teachers for the ablation matrix
        json scfg = base_config((g_work / "data_small").string(), 7);
        scfg["teachers"]["encoder"] = (g_work / "masked_small.apt").string();
        scfg["teachers"]["decoder"] = (g_work / "causal_small.apt").string();
        scfg["pretrain"]["epochs"] = 4;
        spit(g_work / "pretrain_small.json", scfg.dump(1));
        if (run_cli("pretrain " + (g_work / "pretrain_small.json").string() + " " +
                        (g_work / "data_small/mono.tgt").string() + " --objective causal --out " +
                        (g_work / "causal_small.apt").string(),
                    "pretrain_causal_small") != 0 ||
            run_cli("pretrain " + (g_work / "pretrain_small.json").string() + " " +
                        (g_work / "data_small/mono.src").string() + " --objective masked --out " +
                        (g_work / "masked_small.apt").string(),
                    "pretrain_masked_small") != 0)
            throw IoError("small teacher pretraining failed");
        {
            // point the ablate config at the small teachers
            json acfg = base_config((g_work / "data_small").string(), 7);
            acfg["teachers"]["encoder"] = (g_work / "masked_small.apt").string();
            acfg["teachers"]["decoder"] = (g_work / "causal_small.apt").string();
            acfg["trainer"]["epochs"] = 2;
            acfg["trainer"]["valid_limit"] = 16;
            spit(g_work / "ablate.json", acfg.dump(1));
            const std::string out_dir = (g_work / "ablate_out").string();
            (void)out_dir;
        }
        criterion_ablation_suite();
    } catch (const std::exception& e) {
        std::cout << "[FAIL] suite setup — " << e.what() << std::endl;
        g_results.push_back({"suite setup", false, e.what()});
    }

    std::size_t passed = 0;
    for (const auto& c : g_results)
        if (c.passed) ++passed;
    std::cout << "acceptance: " << passed << "/" << g_results.size() << " criteria passed"
              << std::endl;
    return passed == g_results.size() ? 0 : 1;
}
