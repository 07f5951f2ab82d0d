#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include "apt/data.hpp"

using namespace apt;

namespace {

std::vector<int> parse_src_indices(const std::string& line) {
    std::vector<int> out;
    std::istringstream is(line);
    std::string w;
    while (is >> w) out.push_back(std::stoi(w.substr(1)));
    return out;
}

} // namespace

TEST_CASE("identity cipher with window 1 copies the source") {
    SyntheticTaskSpec spec;
    spec.identity_cipher = true;
    spec.window = 1;
    spec.parallel_pairs = 50;
    spec.valid_pairs = 5;
    spec.test_pairs = 5;
    spec.mono_source = 10;
    spec.mono_target = 10;
    auto c = generate_synthetic(spec);
    for (std::size_t i = 0; i < c.train_src.size(); ++i) CHECK(c.train_src[i] == c.train_tgt[i]);
}

TEST_CASE("generation is byte-identical under a fixed seed") {
    SyntheticTaskSpec spec;
    spec.parallel_pairs = 80;
    spec.valid_pairs = 8;
    spec.test_pairs = 8;
    spec.mono_source = 40;
    spec.mono_target = 40;
    auto a = generate_synthetic(spec);
    auto b = generate_synthetic(spec);
    CHECK(a.train_src == b.train_src);
    CHECK(a.train_tgt == b.train_tgt);
    CHECK(a.mono_src == b.mono_src);
    CHECK(a.mono_tgt == b.mono_tgt);
}

TEST_CASE("every pair satisfies the generator's own oracle") {
    SyntheticTaskSpec spec;
    spec.parallel_pairs = 120;
    spec.valid_pairs = 10;
    spec.test_pairs = 10;
    spec.mono_source = 0;
    spec.mono_target = 0;
    auto gen = SyntheticGenerator::build(spec);
    auto c = generate_synthetic(spec);
    auto check_pair = [&](const std::string& src, const std::string& tgt) {
        auto indices = parse_src_indices(src);
        CHECK(gen.to_line(gen.oracle_translate(indices), true) == tgt);
    };
    for (std::size_t i = 0; i < c.train_src.size(); ++i) check_pair(c.train_src[i], c.train_tgt[i]);
    for (std::size_t i = 0; i < c.valid_src.size(); ++i) check_pair(c.valid_src[i], c.valid_tgt[i]);
}

TEST_CASE("train/valid/test sentence sets are disjoint") {
    SyntheticTaskSpec spec;
    spec.vocab_words = 12;
    spec.parallel_pairs = 150;
    spec.valid_pairs = 30;
    spec.test_pairs = 30;
    spec.mono_source = 0;
    spec.mono_target = 0;
    auto c = generate_synthetic(spec);
    std::set<std::string> valid(c.valid_src.begin(), c.valid_src.end());
    std::set<std::string> test(c.test_src.begin(), c.test_src.end());
    CHECK(valid.size() == c.valid_src.size());
    CHECK(test.size() == c.test_src.size());
    for (const auto& s : c.train_src) {
        CHECK(!valid.count(s));
        CHECK(!test.count(s));
    }
    for (const auto& s : valid) CHECK(!test.count(s));
}

TEST_CASE("degenerate synthetic specs are rejected") {
    SyntheticTaskSpec spec;
    spec.vocab_words = 4;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.vocab_words = 16;
    spec.window = 0;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("bpe with zero merges is atom-level") {
    BpeModel m = learn_bpe({"s17 s4"}, 0);
    CHECK(m.merges.empty());
    auto syms = m.encode_word("s17");
    CHECK(syms == std::vector<std::string>{"s", "1", "7</w>"});
}

TEST_CASE("bpe single merge on ababab picks (a,b)") {
    BpeModel m = learn_bpe({"ababab"}, 1);
    REQUIRE(m.merges.size() == 1);
    CHECK(m.merges[0].first == "a");
    CHECK(m.merges[0].second == "b");
}

TEST_CASE("bpe round-trips every corpus sentence") {
    SyntheticTaskSpec spec;
    spec.parallel_pairs = 60;
    spec.valid_pairs = 5;
    spec.test_pairs = 5;
    spec.mono_source = 30;
    spec.mono_target = 0;
    auto c = generate_synthetic(spec);
    std::vector<std::string> corpus = c.train_src;
    corpus.insert(corpus.end(), c.mono_src.begin(), c.mono_src.end());
    BpeModel bpe = learn_bpe(corpus, 40);
    Vocabulary vocab = Vocabulary::build(bpe_symbol_inventory(bpe, corpus), 512);
    Tokenizer tok{bpe, vocab};
    for (const auto& line : corpus) {
        auto ids = tok.encode(line);
        for (int id : ids) CHECK(id >= Vocabulary::first_regular_id);
        CHECK(tok.decode(ids) == line);
    }
}

TEST_CASE("bpe and vocabulary files round-trip") {
    BpeModel m = learn_bpe({"s17 s17 s4 s41"}, 5);
    const std::string bpe_path =
        (std::filesystem::temp_directory_path() / "bpe_test.model").string();
    m.save(bpe_path);
    BpeModel loaded = BpeModel::load(bpe_path);
    CHECK(loaded.merges == m.merges);

    Vocabulary v = Vocabulary::build({"aa", "bb"}, 32);
    const std::string vocab_path =
        (std::filesystem::temp_directory_path() / "vocab_test.txt").string();
    v.save(vocab_path);
    Vocabulary lv = Vocabulary::load(vocab_path);
    CHECK(lv.id_to_token == v.id_to_token);
    CHECK(lv.id_of("bb") == 6);
    CHECK(lv.id_of("zz") == Vocabulary::unk_id);
}

TEST_CASE("batches: equal lengths produce zero padding") {
    ParallelCorpus corpus;
    for (int i = 0; i < 7; ++i)
        corpus.push_back({{5, 6, 2}, {7, 8, 2}});
    auto r = make_batches(corpus, 3, 16);
    for (const auto& b : r.batches) CHECK(b.pad_count() == 0);
    CHECK(r.filtered == 0);
}

TEST_CASE("batches partition the filtered corpus") {
    Rng rng(4);
    ParallelCorpus corpus;
    for (int i = 0; i < 53; ++i) {
        SentencePair p;
        int sl = rng.uniform_int(1, 20), tl = rng.uniform_int(1, 20);
        for (int j = 0; j < sl; ++j) p.src.push_back(rng.uniform_int(5, 30));
        for (int j = 0; j < tl; ++j) p.tgt.push_back(rng.uniform_int(5, 30));
        corpus.push_back(std::move(p));
    }
    auto r = make_batches(corpus, 8, 12);
    std::multiset<std::string> expect, got;
    std::size_t kept = 0;
    for (const auto& p : corpus) {
        if (p.src.size() <= 12 && p.tgt.size() <= 12) {
            ++kept;
            std::string key;
            for (int t : p.src) key += std::to_string(t) + ",";
            key += "|";
            for (int t : p.tgt) key += std::to_string(t) + ",";
            expect.insert(key);
        }
    }
    CHECK(r.filtered == corpus.size() - kept);
    for (const auto& b : r.batches) {
        for (std::size_t i = 0; i < b.src.size(); ++i) {
            std::string key;
            for (std::size_t j = 0; j < b.src_len[i]; ++j) key += std::to_string(b.src[i][j]) + ",";
            key += "|";
            for (std::size_t j = 0; j < b.tgt_len[i]; ++j) key += std::to_string(b.tgt[i][j]) + ",";
            got.insert(key);
        }
    }
    CHECK(expect == got);
}

TEST_CASE("length bucketing pads no more than random batching") {
    Rng rng(9);
    ParallelCorpus corpus;
    for (int i = 0; i < 200; ++i) {
        SentencePair p;
        int sl = rng.uniform_int(2, 24), tl = rng.uniform_int(2, 24);
        p.src.assign(sl, 5);
        p.tgt.assign(tl, 5);
        corpus.push_back(std::move(p));
    }
    auto sorted = make_batches(corpus, 16, 64);

    // random-order oracle: same chunking, shuffled corpus
    ParallelCorpus shuffled = corpus;
    Rng shuffle_rng(123);
    shuffle_rng.shuffle(shuffled);
    std::size_t random_pads = 0, random_cells = 0;
    for (std::size_t at = 0; at < shuffled.size(); at += 16) {
        std::size_t end = std::min(shuffled.size(), at + 16);
        std::size_t sw = 0, tw = 0;
        for (std::size_t i = at; i < end; ++i) {
            sw = std::max(sw, shuffled[i].src.size());
            tw = std::max(tw, shuffled[i].tgt.size());
        }
        for (std::size_t i = at; i < end; ++i) {
            random_pads += (sw - shuffled[i].src.size()) + (tw - shuffled[i].tgt.size());
            random_cells += sw + tw;
        }
    }
    std::size_t sorted_pads = 0, sorted_cells = 0;
    for (const auto& b : sorted.batches) {
        sorted_pads += b.pad_count();
        sorted_cells += b.cell_count();
    }
    const double sorted_frac = double(sorted_pads) / double(sorted_cells);
    const double random_frac = double(random_pads) / double(random_cells);
    CHECK(sorted_frac <= random_frac);
}
