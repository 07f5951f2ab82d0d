#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "apt/tensor.hpp"

namespace apt {

struct Hypothesis {
    std::vector<int> tokens; // emitted tokens; ends with eos iff finished
    double log_prob = 0.0;   // accumulated token log-probability
    bool finished = false;

    double normalized() const {
        return tokens.empty() ? -1e300 : log_prob / static_cast<double>(tokens.size());
    }
};

// Decoding-time view of a model. `begin(src)` encodes the source (plan-aware
// when fusion is attached) and returns a session mapping a bos-prefixed
// target input to its logits matrix. Keeps beam search independent of the
// plan wiring.
using DecodeSession = std::function<Tensor(const std::vector<int>& tgt_input)>;

struct DecodingModel {
    std::function<DecodeSession(const std::vector<int>& src)> begin;
    int tgt_vocab = 0;
    int max_len = 0;
};

// Standard beam search over log-probabilities. Hypotheses ending in eos
// retire with their beam slot; the final ranking is the mean log-probability
// per emitted token, ties broken toward the lexicographically smaller token
// sequence. beam_size 1 is exactly greedy decoding.
Hypothesis beam_search(const DecodingModel& model, const std::vector<int>& src, int beam_size,
                       int max_len);

struct BleuResult {
    double score = 0.0; // [0, 100]
    double brevity_penalty = 1.0;
    double precisions[4] = {0, 0, 0, 0};
    std::size_t hyp_tokens = 0, ref_tokens = 0;

    nlohmann::json to_json() const;
};

// Corpus-level BLEU-4: clipped n-gram precision geometric mean times brevity
// penalty, case-sensitive, unsmoothed (any empty n-gram order zeroes the
// score). Lines are whitespace-tokenized.
BleuResult bleu(const std::vector<std::string>& hypotheses,
                const std::vector<std::string>& references);

// Same metric over pre-tokenized sequences.
BleuResult bleu_tokens(const std::vector<std::vector<std::string>>& hypotheses,
                       const std::vector<std::vector<std::string>>& references);

} // namespace apt
