#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "apt/error.hpp"
#include "apt/rng.hpp"

namespace apt {

// ---- vocabulary -------------------------------------------------------------

// Dense id space with fixed reserved ids; raw-text tokenization can only
// produce ids >= first_regular_id (or unk).
struct Vocabulary {
    static constexpr int pad_id = 0;
    static constexpr int bos_id = 1;
    static constexpr int eos_id = 2;
    static constexpr int unk_id = 3;
    static constexpr int mask_id = 4;
    static constexpr int first_regular_id = 5;

    std::vector<std::string> id_to_token;
    std::unordered_map<std::string, int> token_to_id;

    int size() const { return static_cast<int>(id_to_token.size()); }
    int id_of(const std::string& tok) const;
    const std::string& token_of(int id) const;

    // Reserved entries first, then `symbols` in the given order. Throws if
    // the total exceeds `cap` or a symbol collides with a reserved name.
    static Vocabulary build(const std::vector<std::string>& symbols, int cap);

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);
};

// ---- byte pair encoding -------------------------------------------------------

// Greedy frequency merges over byte-level atoms; the last atom of each word
// carries a "</w>" suffix so decoding restores word boundaries exactly.
struct BpeModel {
    std::vector<std::pair<std::string, std::string>> merges;

    std::vector<std::string> encode_word(const std::string& word) const;
    std::vector<std::string> encode_line(const std::string& line) const;
    static std::string decode_symbols(const std::vector<std::string>& symbols);

    void save(const std::string& path) const;
    static BpeModel load(const std::string& path);

private:
    mutable std::unordered_map<std::string, std::size_t> rank_cache_;
    mutable bool rank_ready_ = false;
    const std::unordered_map<std::string, std::size_t>& ranks() const;
};

std::vector<std::string> word_atoms(const std::string& word);

// Highest-frequency pair first, ties broken lexicographically on
// (left, right). Deterministic for a fixed corpus.
BpeModel learn_bpe(const std::vector<std::string>& corpus_lines, int merge_count);

// All distinct symbols the model can emit on this corpus, sorted.
std::vector<std::string> bpe_symbol_inventory(const BpeModel& bpe,
                                              const std::vector<std::string>& corpus_lines);

struct Tokenizer {
    BpeModel bpe;
    Vocabulary vocab;

    std::vector<int> encode(const std::string& line) const; // no bos/eos added
    std::string decode(const std::vector<int>& ids) const;  // reserved ids skipped
};

// ---- synthetic task -----------------------------------------------------------

// Cipher + local-reorder translation over a Markov source. Stands in for the
// parallel and monolingual corpora; an oracle translation exists for every
// source sentence.
struct SyntheticTaskSpec {
    std::uint64_t seed = 1;
    int vocab_words = 48; // word types per language
    int markov_order = 1; // only order 1 is supported
    int branching = 4;    // successors per word type
    int window = 2;       // reorder: reverse each full window of this size
    bool identity_cipher = false; // share one lexicon and map words to themselves
    int min_len = 3;
    int max_len = 10;
    double stop_prob = 0.25; // per-step stop hazard once min_len is reached
    int parallel_pairs = 2000;
    int valid_pairs = 200;
    int test_pairs = 200;
    int mono_source = 50000;
    int mono_target = 50000;

    void validate() const;
    nlohmann::json to_json() const;
    static SyntheticTaskSpec from_json(const nlohmann::json& j);
};

struct SyntheticGenerator {
    SyntheticTaskSpec spec;
    std::vector<std::string> src_words, tgt_words;
    std::vector<std::vector<double>> transitions; // [V][V], rows sum to 1
    std::vector<double> initial;                  // first-word distribution
    std::vector<int> cipher;                      // src word index -> tgt word index

    static SyntheticGenerator build(const SyntheticTaskSpec& spec);

    std::vector<int> sample_sentence(Rng& rng) const;                  // word indices
    std::vector<int> oracle_translate(const std::vector<int>& src) const;
    std::string to_line(const std::vector<int>& words, bool target) const;

    // Stop hazard h(t): probability the sentence ends after its t-th word.
    double stop_hazard(int length_so_far) const;
};

struct SyntheticCorpora {
    std::vector<std::string> train_src, train_tgt;
    std::vector<std::string> valid_src, valid_tgt;
    std::vector<std::string> test_src, test_tgt;
    std::vector<std::string> mono_src, mono_tgt;
};

SyntheticCorpora generate_synthetic(const SyntheticTaskSpec& spec);

// ---- tokenized corpora and batching ---------------------------------------------

struct SentencePair {
    std::vector<int> src, tgt; // ids, each ending with eos
};

using ParallelCorpus = std::vector<SentencePair>;
using MonoCorpus = std::vector<std::vector<int>>;

ParallelCorpus tokenize_parallel(const std::vector<std::string>& src_lines,
                                 const std::vector<std::string>& tgt_lines,
                                 const Tokenizer& src_tok, const Tokenizer& tgt_tok);
MonoCorpus tokenize_mono(const std::vector<std::string>& lines, const Tokenizer& tok);

struct Batch {
    std::vector<std::vector<int>> src, tgt; // padded to per-batch max with pad_id
    std::vector<std::size_t> src_len, tgt_len;
    std::vector<std::size_t> index; // position of each sentence in the input corpus

    std::size_t pad_count() const;
    std::size_t cell_count() const;
};

struct BatchResult {
    std::vector<Batch> batches;
    std::size_t filtered = 0; // sentences dropped for exceeding max_len
};

// Length-sorted bucketing (stable on input order for ties).
BatchResult make_batches(const ParallelCorpus& corpus, int batch_size, int max_len);
BatchResult make_mono_batches(const MonoCorpus& corpus, int batch_size, int max_len);

// ---- plain file I/O --------------------------------------------------------------

std::vector<std::string> read_lines(const std::string& path);
void write_lines(const std::string& path, const std::vector<std::string>& lines);

} // namespace apt
