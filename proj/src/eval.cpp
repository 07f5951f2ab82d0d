#include "apt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "apt/data.hpp"

namespace apt {

namespace {

std::vector<double> log_softmax_row(const Tensor& logits, std::size_t row) {
    const std::size_t v = logits.cols();
    const double* src = logits.values().data() + row * v;
    double mx = src[0];
    for (std::size_t k = 1; k < v; ++k) mx = std::max(mx, src[k]);
    double z = 0.0;
    for (std::size_t k = 0; k < v; ++k) z += std::exp(src[k] - mx);
    const double lse = mx + std::log(z);
    std::vector<double> out(v);
    for (std::size_t k = 0; k < v; ++k) out[k] = src[k] - lse;
    return out;
}

bool lex_less(const std::vector<int>& a, const std::vector<int>& b) {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

// score-descending, lexicographic tokens ascending on exact ties
bool candidate_before(double sa, const std::vector<int>& ta, double sb,
                      const std::vector<int>& tb) {
    if (sa != sb) return sa > sb;
    return lex_less(ta, tb);
}

} // namespace

Hypothesis beam_search(const DecodingModel& model, const std::vector<int>& src, int beam_size,
                       int max_len) {
    if (beam_size < 1) throw InvalidInputError("beam_search: beam_size must be >= 1");
    if (max_len < 1) throw InvalidInputError("beam_search: max_len must be >= 1");
    if (model.max_len > 0) max_len = std::min(max_len, model.max_len - 1);

    DecodeSession session = model.begin(src);

    std::vector<Hypothesis> alive{Hypothesis{}};
    std::vector<Hypothesis> finished;
    int slots = beam_size;

    for (int t = 0; t < max_len && !alive.empty(); ++t) {
        struct Candidate {
            std::size_t from;
            int token;
            double log_prob;
        };
        std::vector<Candidate> candidates;
        candidates.reserve(alive.size() * static_cast<std::size_t>(model.tgt_vocab));
        for (std::size_t h = 0; h < alive.size(); ++h) {
            std::vector<int> input{Vocabulary::bos_id};
            input.insert(input.end(), alive[h].tokens.begin(), alive[h].tokens.end());
            Tensor logits = session(input);
            std::vector<double> logp = log_softmax_row(logits, logits.rows() - 1);
            for (int k = 0; k < model.tgt_vocab; ++k)
                candidates.push_back({h, k, alive[h].log_prob + logp[static_cast<std::size_t>(k)]});
        }
        // deterministic order: cumulative score desc, then the extended
        // sequence ascending (all candidates share one length, so comparing
        // the stored prefix then the new token is lexicographic)
        std::sort(candidates.begin(), candidates.end(),
                  [&](const Candidate& a, const Candidate& b) {
                      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                      const auto& ta = alive[a.from].tokens;
                      const auto& tb = alive[b.from].tokens;
                      for (std::size_t i = 0; i < ta.size(); ++i)
                          if (ta[i] != tb[i]) return ta[i] < tb[i];
                      return a.token < b.token;
                  });

        std::vector<Hypothesis> next;
        for (const Candidate& c : candidates) {
            if (static_cast<int>(next.size()) >= slots) break;
            Hypothesis h = alive[c.from];
            h.tokens.push_back(c.token);
            h.log_prob = c.log_prob;
            if (c.token == Vocabulary::eos_id) {
                h.finished = true;
                finished.push_back(std::move(h));
                --slots; // a finished hypothesis retires with its slot
                if (slots == 0) break;
            } else {
                next.push_back(std::move(h));
            }
        }
        alive = std::move(next);
    }
    // length limit reached: remaining hypotheses end unfinished
    for (auto& h : alive) finished.push_back(std::move(h));

    if (finished.empty()) throw InvalidInputError("beam_search: no hypothesis produced");
    const Hypothesis* best = &finished[0];
    for (const auto& h : finished)
        if (candidate_before(h.normalized(), h.tokens, best->normalized(), best->tokens) &&
            &h != best)
            best = &h;
    return *best;
}

// ---- BLEU -----------------------------------------------------------------------

namespace {

std::vector<std::string> split_tokens(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string t;
    while (is >> t) out.push_back(t);
    return out;
}

void count_ngrams(const std::vector<std::string>& tokens, std::size_t n,
                  std::map<std::string, std::size_t>& counts) {
    if (tokens.size() < n) return;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string key;
        for (std::size_t j = 0; j < n; ++j) {
            key += tokens[i + j];
            key += '\x1f';
        }
        ++counts[key];
    }
}

} // namespace

nlohmann::json BleuResult::to_json() const {
    return {{"bleu", score},
            {"brevity_penalty", brevity_penalty},
            {"precisions", {precisions[0], precisions[1], precisions[2], precisions[3]}},
            {"hyp_tokens", hyp_tokens},
            {"ref_tokens", ref_tokens}};
}

BleuResult bleu_tokens(const std::vector<std::vector<std::string>>& hypotheses,
                       const std::vector<std::vector<std::string>>& references) {
    if (hypotheses.empty()) throw InvalidInputError("bleu: empty corpus");
    if (hypotheses.size() != references.size())
        throw InvalidInputError("bleu: hypothesis/reference counts differ");

    BleuResult r;
    std::size_t match[4] = {0, 0, 0, 0};
    std::size_t total[4] = {0, 0, 0, 0};
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
        const auto& hyp = hypotheses[i];
        const auto& ref = references[i];
        r.hyp_tokens += hyp.size();
        r.ref_tokens += ref.size();
        for (std::size_t n = 1; n <= 4; ++n) {
            std::map<std::string, std::size_t> hyp_counts, ref_counts;
            count_ngrams(hyp, n, hyp_counts);
            count_ngrams(ref, n, ref_counts);
            for (const auto& [key, c] : hyp_counts) {
                total[n - 1] += c;
                auto it = ref_counts.find(key);
                if (it != ref_counts.end()) match[n - 1] += std::min(c, it->second);
            }
        }
    }
    double log_sum = 0.0;
    bool any_zero = false;
    for (std::size_t n = 0; n < 4; ++n) {
        r.precisions[n] = total[n] ? static_cast<double>(match[n]) / static_cast<double>(total[n])
                                   : 0.0;
        if (r.precisions[n] <= 0.0) any_zero = true;
        else log_sum += std::log(r.precisions[n]);
    }
    r.brevity_penalty =
        (r.hyp_tokens >= r.ref_tokens || r.hyp_tokens == 0)
            ? (r.hyp_tokens ? 1.0 : 0.0)
            : std::exp(1.0 - static_cast<double>(r.ref_tokens) / static_cast<double>(r.hyp_tokens));
    r.score = any_zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / 4.0);
    return r;
}

BleuResult bleu(const std::vector<std::string>& hypotheses,
                const std::vector<std::string>& references) {
    std::vector<std::vector<std::string>> h, r;
    h.reserve(hypotheses.size());
    r.reserve(references.size());
    for (const auto& line : hypotheses) h.push_back(split_tokens(line));
    for (const auto& line : references) r.push_back(split_tokens(line));
    return bleu_tokens(h, r);
}

} // namespace apt
