// Command-line front end: data generation, teacher pre-training, NMT
// training under a plan, translation, evaluation, gradient checking, and the
// ablation suites. Every failure exits nonzero with a one-line
// "E_CODE: message" on stderr.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "apt/ablation.hpp"
#include "apt/checkpoint.hpp"
#include "apt/run_config.hpp"

namespace fs = std::filesystem;
using namespace apt;

namespace {

int env_threads() {
    const char* raw = std::getenv("APT_THREADS");
    if (!raw || !*raw) return 1;
    try {
        return std::max(1, std::stoi(raw));
    } catch (...) {
        throw ConfigError("APT_THREADS must be an integer");
    }
}

nlohmann::json parse_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError(path + " is not valid JSON");
    return j;
}

struct SideData {
    Tokenizer tok;
};

Tokenizer side_tokenizer(const RunConfig& cfg, const std::string& side) {
    const int cap = side == "src" ? cfg.model.src_vocab : cfg.model.tgt_vocab;
    return load_tokenizer(cfg.data, side, cap);
}

nlohmann::json tokenizer_to_json(const Tokenizer& tok) {
    nlohmann::json merges = nlohmann::json::array();
    for (const auto& [a, b] : tok.bpe.merges) merges.push_back(a + " " + b);
    return {{"merges", merges}, {"tokens", tok.vocab.id_to_token}};
}

Tokenizer tokenizer_from_json(const nlohmann::json& j) {
    Tokenizer tok;
    for (const auto& m : j.at("merges")) {
        const std::string line = m.get<std::string>();
        const auto sp = line.find(' ');
        tok.bpe.merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    }
    tok.vocab.id_to_token = j.at("tokens").get<std::vector<std::string>>();
    for (int i = 0; i < tok.vocab.size(); ++i)
        tok.vocab.token_to_id[tok.vocab.id_to_token[static_cast<std::size_t>(i)]] = i;
    return tok;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    return out;
}

// ---- datagen ---------------------------------------------------------------------

int cmd_datagen(const std::string& spec_path, const std::string& out_dir) {
    nlohmann::json spec_json = parse_json_file(spec_path);
    int bpe_merges = 80;
    if (spec_json.contains("bpe_merges")) {
        bpe_merges = spec_json.at("bpe_merges").get<int>();
        spec_json.erase("bpe_merges");
    }
    SyntheticTaskSpec spec = SyntheticTaskSpec::from_json(spec_json);
    SyntheticCorpora corpora = generate_synthetic(spec);

    fs::create_directories(out_dir);
    DataPaths data{out_dir};
    write_lines(data.train_src(), corpora.train_src);
    write_lines(data.train_tgt(), corpora.train_tgt);
    write_lines(data.valid_src(), corpora.valid_src);
    write_lines(data.valid_tgt(), corpora.valid_tgt);
    write_lines(data.test_src(), corpora.test_src);
    write_lines(data.test_tgt(), corpora.test_tgt);
    write_lines(data.mono("src"), corpora.mono_src);
    write_lines(data.mono("tgt"), corpora.mono_tgt);

    auto build_side = [&](const std::string& side, const std::vector<std::string>& train,
                          const std::vector<std::string>& mono) {
        std::vector<std::string> corpus = train;
        corpus.insert(corpus.end(), mono.begin(), mono.end());
        BpeModel bpe = learn_bpe(corpus, bpe_merges);
        bpe.save(data.bpe(side));
        Vocabulary vocab = Vocabulary::build(bpe_symbol_inventory(bpe, corpus), 512);
        vocab.save(data.vocab(side));
        return vocab.size();
    };
    const int src_vocab = build_side("src", corpora.train_src, corpora.mono_src);
    const int tgt_vocab = build_side("tgt", corpora.train_tgt, corpora.mono_tgt);

    SyntheticGenerator gen = SyntheticGenerator::build(spec);
    nlohmann::json meta{{"task", spec.to_json()},
                        {"bpe_merges", bpe_merges},
                        {"cipher", gen.cipher},
                        {"src_vocab_size", src_vocab},
                        {"tgt_vocab_size", tgt_vocab},
                        {"sizes",
                         {{"train", corpora.train_src.size()},
                          {"valid", corpora.valid_src.size()},
                          {"test", corpora.test_src.size()},
                          {"mono_src", corpora.mono_src.size()},
                          {"mono_tgt", corpora.mono_tgt.size()}}}};
    open_out(data.meta()) << meta.dump(2) << "\n";
    std::cout << "wrote " << out_dir << " (src vocab " << src_vocab << ", tgt vocab " << tgt_vocab
              << ")\n";
    return 0;
}

// ---- pretrain --------------------------------------------------------------------

int cmd_pretrain(const std::string& config_path, const std::string& corpus_path,
                 const std::string& objective, const std::string& out_path) {
    RunConfig cfg = RunConfig::load(config_path);
    std::string side;
    if (corpus_path.size() > 4 && corpus_path.substr(corpus_path.size() - 4) == ".src")
        side = "src";
    else if (corpus_path.size() > 4 && corpus_path.substr(corpus_path.size() - 4) == ".tgt")
        side = "tgt";
    else
        throw InvalidInputError("cannot infer the language side from " + corpus_path +
                                " (expected a .src or .tgt file)");

    Tokenizer tok = side_tokenizer(cfg, side);
    MonoCorpus all = tokenize_mono(read_lines(corpus_path), tok);
    if (all.empty()) throw InvalidInputError("empty corpus: " + corpus_path);
    const std::size_t valid_n = std::min<std::size_t>(500, std::max<std::size_t>(1, all.size() / 20));
    MonoCorpus valid(all.end() - static_cast<long>(valid_n), all.end());
    MonoCorpus train(all.begin(), all.end() - static_cast<long>(valid_n));

    TeacherConfig tcfg = cfg.teacher_shape;
    tcfg.kind = teacher_kind_from_name(objective);
    tcfg.language = side;
    tcfg.vocab = tok.vocab.size();

    std::ofstream metrics = open_out(out_path + ".metrics.jsonl");
    auto sink = [&metrics](const nlohmann::json& j) { metrics << j.dump() << "\n"; };
    PretrainResult result =
        tcfg.kind == TeacherKind::causal
            ? pretrain_causal(train, valid, tcfg, cfg.pretrain, cfg.seed, sink)
            : pretrain_masked(train, valid, tcfg, cfg.pretrain, cfg.seed, sink);

    nlohmann::json meta{{"objective", objective},
                        {"corpus", corpus_path},
                        {"seed", cfg.seed},
                        {"steps", result.steps},
                        {"final_valid_ppl", result.epochs.empty() ? 0.0
                                                                  : result.epochs.back().valid_ppl},
                        {"tokenizer", tokenizer_to_json(tok)}};
    save_teacher(out_path, result.model, meta);
    std::cout << "pretrained " << objective << " teacher (" << side << "), "
              << result.steps << " steps, final ppl "
              << (result.epochs.empty() ? 0.0 : result.epochs.back().valid_ppl) << ", saved "
              << out_path << "\n";
    return 0;
}

// ---- train -----------------------------------------------------------------------

struct LoadedTeachers {
    Teachers teachers;
    TeacherInventory inventory;
};

LoadedTeachers load_teachers(const RunConfig& cfg, const IntegrationPlan& plan) {
    LoadedTeachers out;
    if (plan.needs_encoder_teacher() && !cfg.encoder_teacher_ckpt.empty()) {
        out.teachers.encoder =
            std::make_shared<TeacherModel>(load_teacher(cfg.encoder_teacher_ckpt));
        out.inventory.encoder = {true, out.teachers.encoder->cfg};
    }
    if (plan.needs_decoder_teacher() && !cfg.decoder_teacher_ckpt.empty()) {
        out.teachers.decoder =
            std::make_shared<TeacherModel>(load_teacher(cfg.decoder_teacher_ckpt));
        out.inventory.decoder = {true, out.teachers.decoder->cfg};
    }
    return out;
}

int cmd_train(const std::string& config_path, const std::string& mode, const std::string& out_path,
              const std::string& metrics_path) {
    RunConfig cfg = RunConfig::load(config_path);
    IntegrationPlan plan = cfg.plan;
    if (!mode.empty()) plan.mode = plan_mode_from_name(mode);

    Tokenizer src_tok = side_tokenizer(cfg, "src");
    Tokenizer tgt_tok = side_tokenizer(cfg, "tgt");
    ModelConfig model_cfg = cfg.model;
    model_cfg.src_vocab = src_tok.vocab.size();
    model_cfg.tgt_vocab = tgt_tok.vocab.size();

    LoadedTeachers lt = load_teachers(cfg, plan);
    PlanReport report = validate_plan(plan, model_cfg, lt.inventory);
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
    if (!report.valid) {
        for (const auto& v : report.violations)
            std::cerr << "violation [" << v.code << "]: " << v.message << "\n";
        throw ConfigError("plan validation failed");
    }
    for (const auto& [name, teacher] :
         {std::pair<const char*, std::shared_ptr<TeacherModel>>{"encoder", lt.teachers.encoder},
          {"decoder", lt.teachers.decoder}}) {
        if (teacher && teacher->cfg.max_len < cfg.trainer.max_len)
            throw ConfigError(std::string(name) + " teacher max_len " +
                              std::to_string(teacher->cfg.max_len) +
                              " is below the trainer max_len");
    }

    ParallelCorpus train_corpus = tokenize_parallel(
        read_lines(cfg.data.train_src()), read_lines(cfg.data.train_tgt()), src_tok, tgt_tok);
    ParallelCorpus valid_corpus = tokenize_parallel(
        read_lines(cfg.data.valid_src()), read_lines(cfg.data.valid_tgt()), src_tok, tgt_tok);

    Rng rng(cfg.seed);
    StudentModel student =
        build_student(plan, model_cfg, lt.teachers, rng, cfg.trainer.finetune_init);
    TrainingStep step(plan, model_cfg, student, lt.teachers, cfg.trainer.exact_cap);

    std::ofstream metrics = open_out(metrics_path.empty() ? out_path + ".metrics.jsonl"
                                                          : metrics_path);
    auto sink = [&metrics](const nlohmann::json& j) { metrics << j.dump() << "\n"; };
    TrainResult result = train(step, train_corpus, valid_corpus, cfg.trainer, cfg.seed, sink);

    nlohmann::json meta{{"seed", cfg.seed},
                        {"mode", plan_mode_name(plan.mode)},
                        {"steps", result.steps},
                        {"best_epoch", result.best_epoch},
                        {"best_valid_bleu", result.best_bleu},
                        {"aborted", result.aborted},
                        {"src_tokenizer", tokenizer_to_json(src_tok)},
                        {"tgt_tokenizer", tokenizer_to_json(tgt_tok)}};
    save_student(out_path, student, plan, lt.teachers, meta);
    if (result.aborted)
        throw NumericError("training aborted (" + result.abort_reason +
                           "); last good checkpoint written to " + out_path);
    std::cout << "trained " << plan_mode_name(plan.mode) << ": " << result.steps
              << " steps, best valid BLEU " << result.best_bleu << " (epoch "
              << result.best_epoch << "), saved " << out_path << "\n";
    return 0;
}

// ---- translate -------------------------------------------------------------------

int cmd_translate(const std::string& ckpt_path, const std::string& input_path, int beam,
                  const std::string& out_path) {
    StudentCheckpoint ck = load_student(ckpt_path);
    if (!ck.metadata.contains("src_tokenizer") || !ck.metadata.contains("tgt_tokenizer"))
        throw ConfigError(ckpt_path + " carries no tokenizers; was it produced by train?");
    Tokenizer src_tok = tokenizer_from_json(ck.metadata.at("src_tokenizer"));
    Tokenizer tgt_tok = tokenizer_from_json(ck.metadata.at("tgt_tokenizer"));

    Teachers teachers{ck.enc_teacher, ck.dec_teacher};
    TrainingStep step(ck.plan, ck.model_cfg, ck.student, teachers);
    DecodingModel dm = decoding_model(step);

    std::vector<std::string> lines = read_lines(input_path);
    std::vector<std::string> outputs(lines.size());
    const int max_out = ck.model_cfg.max_len - 1;
    auto translate_range = [&](std::size_t from, std::size_t to) {
        for (std::size_t i = from; i < to; ++i) {
            std::vector<int> ids = src_tok.encode(lines[i]);
            ids.push_back(Vocabulary::eos_id);
            Hypothesis best = beam_search(dm, ids, beam, max_out);
            outputs[i] = tgt_tok.decode(best.tokens);
        }
    };
    const int threads = env_threads();
    if (threads <= 1 || lines.size() < 2) {
        translate_range(0, lines.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (lines.size() + threads - 1) / static_cast<std::size_t>(threads);
        for (int t = 0; t < threads; ++t) {
            const std::size_t from = static_cast<std::size_t>(t) * chunk;
            const std::size_t to = std::min(lines.size(), from + chunk);
            if (from < to) pool.emplace_back(translate_range, from, to);
        }
        for (auto& th : pool) th.join();
    }
    write_lines(out_path, outputs);
    std::cout << "translated " << lines.size() << " sentences to " << out_path << "\n";
    return 0;
}

// ---- evaluate / gradcheck ----------------------------------------------------------

int cmd_evaluate(const std::string& hyp_path, const std::string& ref_path) {
    BleuResult r = bleu(read_lines(hyp_path), read_lines(ref_path));
    std::cout << "BLEU = " << r.score << "\n" << r.to_json().dump() << "\n";
    return 0;
}

int cmd_gradcheck(const std::string& config_path) {
    RunConfig cfg = RunConfig::load(config_path);
    GradCheckReport report = gradcheck(cfg.plan, cfg.seed);
    nlohmann::json j = report.to_json();
    j["passed"] = report.passed();
    std::cout << j.dump() << "\n";
    return 0;
}

// ---- ablate ----------------------------------------------------------------------

int cmd_ablate(const std::string& config_path, const std::string& suite,
               const std::string& out_dir) {
    RunConfig cfg = RunConfig::load(config_path);
    std::vector<AblationCell> cells = ablation_suite(suite, cfg.plan.eta, cfg.plan.beta);

    Tokenizer src_tok = side_tokenizer(cfg, "src");
    Tokenizer tgt_tok = side_tokenizer(cfg, "tgt");
    SuiteInputs inputs;
    inputs.model = cfg.model;
    inputs.model.src_vocab = src_tok.vocab.size();
    inputs.model.tgt_vocab = tgt_tok.vocab.size();
    inputs.trainer = cfg.trainer;
    inputs.seed = cfg.seed;
    inputs.threads = env_threads();
    inputs.train = tokenize_parallel(read_lines(cfg.data.train_src()),
                                     read_lines(cfg.data.train_tgt()), src_tok, tgt_tok);
    inputs.valid = tokenize_parallel(read_lines(cfg.data.valid_src()),
                                     read_lines(cfg.data.valid_tgt()), src_tok, tgt_tok);
    if (!cfg.encoder_teacher_ckpt.empty())
        inputs.teachers.encoder =
            std::make_shared<TeacherModel>(load_teacher(cfg.encoder_teacher_ckpt));
    if (!cfg.decoder_teacher_ckpt.empty())
        inputs.teachers.decoder =
            std::make_shared<TeacherModel>(load_teacher(cfg.decoder_teacher_ckpt));

    fs::create_directories(out_dir);
    std::vector<std::shared_ptr<std::ofstream>> sinks; // keep files open per cell
    inputs.sink_for = [&](const std::string& cell) -> MetricSink {
        auto out = std::make_shared<std::ofstream>(out_dir + "/" + cell + ".metrics.jsonl");
        if (!*out) throw IoError("cannot write cell metrics for " + cell);
        sinks.push_back(out);
        return [out](const nlohmann::json& j) { *out << j.dump() << "\n"; };
    };

    std::vector<CellOutcome> outcomes = run_suite(cells, inputs);
    const std::string csv = suite_summary_csv(outcomes);
    open_out(out_dir + "/summary.csv") << csv;
    std::cout << csv;
    for (const auto& out : outcomes)
        if (out.failed) std::cerr << "cell " << out.name << " failed: " << out.error << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale NMT with pre-trained-model fusion and distillation"};
    app.require_subcommand(1);

    std::string spec_path, out_dir, config_path, corpus_path, objective = "causal";
    std::string out_path, metrics_path, mode, ckpt_path, input_path, hyp_path, ref_path, suite;
    int beam = 4;

    auto* datagen = app.add_subcommand("datagen", "generate the synthetic corpora");
    datagen->add_option("spec", spec_path, "task spec JSON")->required();
    datagen->add_option("out", out_dir, "output directory")->required();

    auto* pretrain = app.add_subcommand("pretrain", "pre-train a teacher LM");
    pretrain->add_option("config", config_path)->required();
    pretrain->add_option("corpus", corpus_path)->required();
    pretrain->add_option("--objective", objective, "causal|masked")->required();
    pretrain->add_option("--out", out_path, "checkpoint path")->required();

    auto* train = app.add_subcommand("train", "train the NMT student");
    train->add_option("config", config_path)->required();
    train->add_option("--mode", mode, "baseline|finetune|apt");
    train->add_option("--out", out_path, "checkpoint path")->required();
    train->add_option("--metrics", metrics_path, "metrics JSONL path");

    auto* translate = app.add_subcommand("translate", "decode a source file");
    translate->add_option("ckpt", ckpt_path)->required();
    translate->add_option("--input", input_path)->required();
    translate->add_option("--beam", beam, "beam width");
    translate->add_option("--out", out_path)->required();

    auto* evaluate = app.add_subcommand("evaluate", "corpus BLEU of hyp vs ref");
    evaluate->add_option("--hyp", hyp_path)->required();
    evaluate->add_option("--ref", ref_path)->required();

    auto* gradcheckc = app.add_subcommand("gradcheck", "finite-difference gradient check");
    gradcheckc->add_option("config", config_path)->required();

    auto* ablate = app.add_subcommand("ablate", "run an ablation/strategy suite");
    ablate->add_option("config", config_path)->required();
    ablate->add_option("--suite", suite, "table3|table5|table6")->required();
    ablate->add_option("--out", out_dir, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(datagen)) return cmd_datagen(spec_path, out_dir);
        if (app.got_subcommand(pretrain))
            return cmd_pretrain(config_path, corpus_path, objective, out_path);
        if (app.got_subcommand(train)) return cmd_train(config_path, mode, out_path, metrics_path);
        if (app.got_subcommand(translate))
            return cmd_translate(ckpt_path, input_path, beam, out_path);
        if (app.got_subcommand(evaluate)) return cmd_evaluate(hyp_path, ref_path);
        if (app.got_subcommand(gradcheckc)) return cmd_gradcheck(config_path);
        if (app.got_subcommand(ablate)) return cmd_ablate(config_path, suite, out_dir);
    } catch (const AptError& e) {
        std::cerr << e.one_line() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "E_INTERNAL: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
