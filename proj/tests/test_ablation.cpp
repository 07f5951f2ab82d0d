#include <doctest.h>

#include "apt/ablation.hpp"

using namespace apt;

TEST_CASE("the strategy suite enumerates the seven strategy cells") {
    auto cells = ablation_suite("table5");
    REQUIRE(cells.size() == 7);
    CHECK(cells[0].name == "baseline");
    std::vector<std::string> names;
    for (const auto& c : cells) names.push_back(c.name);
    for (const char* expect : {"encoder_fusion", "encoder_kd", "encoder_fusion_kd",
                               "decoder_fusion", "decoder_kd", "decoder_fusion_kd"})
        CHECK(std::find(names.begin(), names.end(), expect) != names.end());
}

TEST_CASE("the mechanism suite includes the double-ablation cell") {
    auto cells = ablation_suite("table3");
    bool found = false;
    for (const auto& c : cells)
        if (c.name == "apt_no_gating_no_layer_attention") {
            found = true;
            CHECK(c.plan.ablations.no_gating);
            CHECK(c.plan.ablations.no_layer_attention);
        }
    CHECK(found);
    CHECK(cells[0].name == "baseline");
}

TEST_CASE("the layer suite covers both mechanisms at four placements") {
    auto cells = ablation_suite("table6");
    CHECK(cells.size() == 9); // baseline + 4 fusion + 4 kd
    CHECK_THROWS_AS(ablation_suite("table9"), ConfigError);
}

TEST_CASE("suites run every cell, record failures, and zero the baseline delta") {
    SyntheticTaskSpec spec;
    spec.seed = 3;
    spec.vocab_words = 16;
    spec.window = 1;
    spec.parallel_pairs = 48;
    spec.valid_pairs = 8;
    spec.test_pairs = 0;
    spec.mono_source = 0;
    spec.mono_target = 0;
    auto corpora = generate_synthetic(spec);
    BpeModel src_bpe = learn_bpe(corpora.train_src, 30);
    BpeModel tgt_bpe = learn_bpe(corpora.train_tgt, 30);
    Tokenizer src_tok{src_bpe,
                      Vocabulary::build(bpe_symbol_inventory(src_bpe, corpora.train_src), 512)};
    Tokenizer tgt_tok{tgt_bpe,
                      Vocabulary::build(bpe_symbol_inventory(tgt_bpe, corpora.train_tgt), 512)};

    SuiteInputs inputs;
    inputs.train = tokenize_parallel(corpora.train_src, corpora.train_tgt, src_tok, tgt_tok);
    inputs.valid = tokenize_parallel(corpora.valid_src, corpora.valid_tgt, src_tok, tgt_tok);
    inputs.model.d_model = 16;
    inputs.model.n_heads = 2;
    inputs.model.enc_depth = 1;
    inputs.model.dec_depth = 1;
    inputs.model.d_ff = 32;
    inputs.model.src_vocab = src_tok.vocab.size();
    inputs.model.tgt_vocab = tgt_tok.vocab.size();
    inputs.model.dropout = 0.0;
    inputs.model.max_len = 32;
    inputs.trainer.epochs = 1;
    inputs.trainer.batch_size = 16;
    inputs.trainer.warmup_steps = 20;
    inputs.trainer.valid_limit = 4;
    inputs.seed = 5;

    // no teachers provided: baseline succeeds, apt cells fail but are recorded
    std::vector<AblationCell> cells{{"baseline", IntegrationPlan{}},
                                    {"needs_teacher", IntegrationPlan::recommended()}};
    auto outcomes = run_suite(cells, inputs);
    REQUIRE(outcomes.size() == 2);
    CHECK(!outcomes[0].failed);
    CHECK(outcomes[0].delta_vs_baseline == 0.0);
    CHECK(outcomes[1].failed);
    CHECK(!outcomes[1].error.empty());

    std::string csv = suite_summary_csv(outcomes);
    CHECK(csv.find("cell_name,bleu,delta_vs_baseline") == 0);
    CHECK(csv.find("baseline,") != std::string::npos);
    CHECK(csv.find("needs_teacher,failed") != std::string::npos);
}
