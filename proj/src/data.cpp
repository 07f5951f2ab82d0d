#include "apt/data.hpp"

#include "apt/model_config.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace apt {

// ---- vocabulary -----------------------------------------------------------------

namespace {
const std::vector<std::string> kReserved = {"<pad>", "<bos>", "<eos>", "<unk>", "<mask>"};
}

int Vocabulary::id_of(const std::string& tok) const {
    auto it = token_to_id.find(tok);
    return it == token_to_id.end() ? unk_id : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
    if (id < 0 || id >= size()) throw VocabError("token_of: id out of range");
    return id_to_token[static_cast<std::size_t>(id)];
}

Vocabulary Vocabulary::build(const std::vector<std::string>& symbols, int cap) {
    Vocabulary v;
    v.id_to_token = kReserved;
    for (const auto& s : symbols) {
        if (std::find(kReserved.begin(), kReserved.end(), s) != kReserved.end())
            throw ConfigError("vocabulary: symbol collides with reserved token " + s);
        v.id_to_token.push_back(s);
    }
    if (v.size() > cap)
        throw ConfigError("vocabulary: " + std::to_string(v.size()) + " entries exceed cap " +
                          std::to_string(cap));
    for (int i = 0; i < v.size(); ++i) v.token_to_id[v.id_to_token[i]] = i;
    return v;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& t : id_to_token) out << t << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) v.id_to_token.push_back(line);
    if (v.size() < first_regular_id ||
        !std::equal(kReserved.begin(), kReserved.end(), v.id_to_token.begin()))
        throw ConfigError("vocabulary file " + path + " lacks the reserved prefix");
    for (int i = 0; i < v.size(); ++i) v.token_to_id[v.id_to_token[i]] = i;
    return v;
}

// ---- BPE ------------------------------------------------------------------------

std::vector<std::string> word_atoms(const std::string& word) {
    std::vector<std::string> atoms;
    for (char c : word) atoms.emplace_back(1, c);
    if (!atoms.empty()) atoms.back() += "</w>";
    return atoms;
}

const std::unordered_map<std::string, std::size_t>& BpeModel::ranks() const {
    if (!rank_ready_) {
        rank_cache_.clear();
        for (std::size_t i = 0; i < merges.size(); ++i)
            rank_cache_[merges[i].first + "\t" + merges[i].second] = i;
        rank_ready_ = true;
    }
    return rank_cache_;
}

std::vector<std::string> BpeModel::encode_word(const std::string& word) const {
    std::vector<std::string> syms = word_atoms(word);
    const auto& rank = ranks();
    while (syms.size() > 1) {
        std::size_t best_rank = merges.size();
        std::size_t best_pos = 0;
        for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
            auto it = rank.find(syms[i] + "\t" + syms[i + 1]);
            if (it != rank.end() && it->second < best_rank) {
                best_rank = it->second;
                best_pos = i;
            }
        }
        if (best_rank == merges.size()) break;
        // merge every occurrence of the chosen pair, left to right
        const std::string a = syms[best_pos], b = syms[best_pos + 1];
        std::vector<std::string> out;
        out.reserve(syms.size());
        for (std::size_t i = 0; i < syms.size();) {
            if (i + 1 < syms.size() && syms[i] == a && syms[i + 1] == b) {
                out.push_back(a + b);
                i += 2;
            } else {
                out.push_back(syms[i]);
                ++i;
            }
        }
        syms = std::move(out);
    }
    return syms;
}

std::vector<std::string> BpeModel::encode_line(const std::string& line) const {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string word;
    while (is >> word) {
        auto syms = encode_word(word);
        out.insert(out.end(), syms.begin(), syms.end());
    }
    return out;
}

std::string BpeModel::decode_symbols(const std::vector<std::string>& symbols) {
    std::string out;
    for (const auto& s : symbols) {
        if (s.size() >= 4 && s.compare(s.size() - 4, 4, "</w>") == 0) {
            out += s.substr(0, s.size() - 4);
            out += ' ';
        } else {
            out += s;
        }
    }
    if (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

void BpeModel::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& [a, b] : merges) out << a << " " << b << "\n";
}

BpeModel BpeModel::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    BpeModel m;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto sp = line.find(' ');
        if (sp == std::string::npos) throw ConfigError("bpe file " + path + ": malformed merge");
        m.merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    }
    return m;
}

BpeModel learn_bpe(const std::vector<std::string>& corpus_lines, int merge_count) {
    if (corpus_lines.empty()) throw InvalidInputError("learn_bpe: empty corpus");
    // word frequency table
    std::map<std::string, std::size_t> word_freq; // ordered for determinism
    for (const auto& line : corpus_lines) {
        std::istringstream is(line);
        std::string w;
        while (is >> w) ++word_freq[w];
    }
    std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
    words.reserve(word_freq.size());
    for (const auto& [w, f] : word_freq) words.emplace_back(word_atoms(w), f);

    BpeModel model;
    for (int step = 0; step < merge_count; ++step) {
        std::map<std::pair<std::string, std::string>, std::size_t> pair_freq;
        for (const auto& [syms, f] : words)
            for (std::size_t i = 0; i + 1 < syms.size(); ++i)
                pair_freq[{syms[i], syms[i + 1]}] += f;
        if (pair_freq.empty()) break;
        // highest count; std::map iteration gives the lexicographically
        // smallest pair first, so strict > keeps it on ties
        auto best = pair_freq.begin();
        for (auto it = pair_freq.begin(); it != pair_freq.end(); ++it)
            if (it->second > best->second) best = it;
        const auto [a, b] = best->first;
        model.merges.emplace_back(a, b);
        for (auto& [syms, f] : words) {
            std::vector<std::string> out;
            out.reserve(syms.size());
            for (std::size_t i = 0; i < syms.size();) {
                if (i + 1 < syms.size() && syms[i] == a && syms[i + 1] == b) {
                    out.push_back(a + b);
                    i += 2;
                } else {
                    out.push_back(syms[i]);
                    ++i;
                }
            }
            syms = std::move(out);
        }
    }
    return model;
}

std::vector<std::string> bpe_symbol_inventory(const BpeModel& bpe,
                                              const std::vector<std::string>& corpus_lines) {
    std::set<std::string> seen;
    std::set<std::string> words;
    for (const auto& line : corpus_lines) {
        std::istringstream is(line);
        std::string w;
        while (is >> w) words.insert(w);
    }
    for (const auto& w : words)
        for (const auto& s : bpe.encode_word(w)) seen.insert(s);
    return {seen.begin(), seen.end()};
}

std::vector<int> Tokenizer::encode(const std::string& line) const {
    std::vector<int> ids;
    for (const auto& s : bpe.encode_line(line)) ids.push_back(vocab.id_of(s));
    return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
    std::vector<std::string> syms;
    for (int id : ids) {
        if (id < Vocabulary::first_regular_id) continue;
        syms.push_back(vocab.token_of(id));
    }
    return BpeModel::decode_symbols(syms);
}

// ---- synthetic task ---------------------------------------------------------------

void SyntheticTaskSpec::validate() const {
    if (vocab_words < 8) throw ConfigError("synthetic: vocab_words must be >= 8");
    if (markov_order != 1) throw ConfigError("synthetic: only markov_order 1 is supported");
    if (branching < 1 || branching > vocab_words)
        throw ConfigError("synthetic: branching out of range");
    if (window < 1) throw ConfigError("synthetic: window must be >= 1");
    if (min_len < 1 || max_len < min_len) throw ConfigError("synthetic: bad length range");
    if (stop_prob <= 0.0 || stop_prob >= 1.0)
        throw ConfigError("synthetic: stop_prob must be in (0,1)");
    if (parallel_pairs < 1 || valid_pairs < 0 || test_pairs < 0 || mono_source < 0 ||
        mono_target < 0)
        throw ConfigError("synthetic: corpus sizes must be non-negative");
}

nlohmann::json SyntheticTaskSpec::to_json() const {
    return {{"seed", seed},
            {"vocab_words", vocab_words},
            {"markov_order", markov_order},
            {"branching", branching},
            {"window", window},
            {"identity_cipher", identity_cipher},
            {"min_len", min_len},
            {"max_len", max_len},
            {"stop_prob", stop_prob},
            {"parallel_pairs", parallel_pairs},
            {"valid_pairs", valid_pairs},
            {"test_pairs", test_pairs},
            {"mono_source", mono_source},
            {"mono_target", mono_target}};
}

SyntheticTaskSpec SyntheticTaskSpec::from_json(const nlohmann::json& j) {
    reject_unknown_keys(j,
                        {"seed", "vocab_words", "markov_order", "branching", "window",
                         "identity_cipher", "min_len", "max_len", "stop_prob", "parallel_pairs",
                         "valid_pairs", "test_pairs", "mono_source", "mono_target"},
                        "synthetic spec");
    SyntheticTaskSpec s;
    s.seed = j.value("seed", s.seed);
    s.vocab_words = j.value("vocab_words", s.vocab_words);
    s.markov_order = j.value("markov_order", s.markov_order);
    s.branching = j.value("branching", s.branching);
    s.window = j.value("window", s.window);
    s.identity_cipher = j.value("identity_cipher", s.identity_cipher);
    s.min_len = j.value("min_len", s.min_len);
    s.max_len = j.value("max_len", s.max_len);
    s.stop_prob = j.value("stop_prob", s.stop_prob);
    s.parallel_pairs = j.value("parallel_pairs", s.parallel_pairs);
    s.valid_pairs = j.value("valid_pairs", s.valid_pairs);
    s.test_pairs = j.value("test_pairs", s.test_pairs);
    s.mono_source = j.value("mono_source", s.mono_source);
    s.mono_target = j.value("mono_target", s.mono_target);
    s.validate();
    return s;
}

SyntheticGenerator SyntheticGenerator::build(const SyntheticTaskSpec& spec) {
    spec.validate();
    SyntheticGenerator g;
    g.spec = spec;
    const int v = spec.vocab_words;
    for (int i = 0; i < v; ++i) {
        g.src_words.push_back("s" + std::to_string(i));
        g.tgt_words.push_back(spec.identity_cipher ? "s" + std::to_string(i)
                                                   : "t" + std::to_string(i));
    }
    Rng rng(spec.seed);
    Rng trans_rng = rng.fork(1);
    g.transitions.assign(v, std::vector<double>(v, 0.0));
    for (int s = 0; s < v; ++s) {
        // pick `branching` distinct successors with random positive mass
        std::vector<int> ids(v);
        std::iota(ids.begin(), ids.end(), 0);
        trans_rng.shuffle(ids);
        double total = 0.0;
        std::vector<double> mass(spec.branching);
        for (double& m : mass) {
            m = 0.2 + trans_rng.uniform();
            total += m;
        }
        for (int b = 0; b < spec.branching; ++b) g.transitions[s][ids[b]] = mass[b] / total;
    }
    g.initial.assign(v, 1.0 / v);
    Rng cipher_rng = rng.fork(2);
    g.cipher.resize(v);
    std::iota(g.cipher.begin(), g.cipher.end(), 0);
    if (!spec.identity_cipher) cipher_rng.shuffle(g.cipher);
    return g;
}

double SyntheticGenerator::stop_hazard(int length_so_far) const {
    if (length_so_far < spec.min_len) return 0.0;
    if (length_so_far >= spec.max_len) return 1.0;
    return spec.stop_prob;
}

std::vector<int> SyntheticGenerator::sample_sentence(Rng& rng) const {
    std::vector<int> words;
    const int v = spec.vocab_words;
    // first word
    double u = rng.uniform();
    int cur = 0;
    double acc = 0.0;
    for (int i = 0; i < v; ++i) {
        acc += initial[i];
        if (u < acc) {
            cur = i;
            break;
        }
    }
    words.push_back(cur);
    while (true) {
        if (rng.uniform() < stop_hazard(static_cast<int>(words.size()))) break;
        u = rng.uniform();
        acc = 0.0;
        int nxt = cur;
        for (int i = 0; i < v; ++i) {
            acc += transitions[cur][i];
            if (u < acc) {
                nxt = i;
                break;
            }
        }
        words.push_back(nxt);
        cur = nxt;
    }
    return words;
}

std::vector<int> SyntheticGenerator::oracle_translate(const std::vector<int>& src) const {
    std::vector<int> out;
    out.reserve(src.size());
    for (int w : src) out.push_back(cipher[static_cast<std::size_t>(w)]);
    // reverse each full window; trailing partial window is left in place
    const int w = spec.window;
    for (std::size_t start = 0; start + w <= out.size(); start += w)
        std::reverse(out.begin() + start, out.begin() + start + w);
    return out;
}

std::string SyntheticGenerator::to_line(const std::vector<int>& words, bool target) const {
    const auto& lex = target ? tgt_words : src_words;
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += lex[static_cast<std::size_t>(words[i])];
    }
    return out;
}

SyntheticCorpora generate_synthetic(const SyntheticTaskSpec& spec) {
    SyntheticGenerator gen = SyntheticGenerator::build(spec);
    Rng root(spec.seed);

    SyntheticCorpora c;
    std::set<std::string> held_out; // sources reserved for valid/test

    auto sample_lines = [&](Rng rng, int count, std::vector<std::string>& src_out,
                            std::vector<std::string>* tgt_out, bool unique_held_out) {
        int guard = 0;
        while (static_cast<int>(src_out.size()) < count) {
            if (++guard > count * 200 + 10000)
                throw InvalidInputError("synthetic: cannot draw enough distinct sentences; "
                                        "enlarge the length range or vocabulary");
            auto words = gen.sample_sentence(rng);
            std::string line = gen.to_line(words, false);
            if (unique_held_out) {
                if (held_out.count(line)) continue;
                held_out.insert(line);
            } else if (held_out.count(line)) {
                continue; // training may repeat internally but avoids held-out sentences
            }
            src_out.push_back(line);
            if (tgt_out) tgt_out->push_back(gen.to_line(gen.oracle_translate(words), true));
        }
    };

    Rng valid_rng = root.fork(10), test_rng = root.fork(11), train_rng = root.fork(12),
        mono_src_rng = root.fork(13), mono_tgt_rng = root.fork(14);

    sample_lines(valid_rng, spec.valid_pairs, c.valid_src, &c.valid_tgt, true);
    sample_lines(test_rng, spec.test_pairs, c.test_src, &c.test_tgt, true);
    sample_lines(train_rng, spec.parallel_pairs, c.train_src, &c.train_tgt, false);

    for (int i = 0; i < spec.mono_source; ++i)
        c.mono_src.push_back(gen.to_line(gen.sample_sentence(mono_src_rng), false));
    for (int i = 0; i < spec.mono_target; ++i) {
        auto words = gen.sample_sentence(mono_tgt_rng);
        c.mono_tgt.push_back(gen.to_line(gen.oracle_translate(words), true));
    }
    return c;
}

// ---- tokenized corpora / batching ----------------------------------------------------

ParallelCorpus tokenize_parallel(const std::vector<std::string>& src_lines,
                                 const std::vector<std::string>& tgt_lines,
                                 const Tokenizer& src_tok, const Tokenizer& tgt_tok) {
    if (src_lines.size() != tgt_lines.size())
        throw InvalidInputError("tokenize_parallel: side line counts differ");
    ParallelCorpus out;
    out.reserve(src_lines.size());
    for (std::size_t i = 0; i < src_lines.size(); ++i) {
        SentencePair p;
        p.src = src_tok.encode(src_lines[i]);
        p.src.push_back(Vocabulary::eos_id);
        p.tgt = tgt_tok.encode(tgt_lines[i]);
        p.tgt.push_back(Vocabulary::eos_id);
        out.push_back(std::move(p));
    }
    return out;
}

MonoCorpus tokenize_mono(const std::vector<std::string>& lines, const Tokenizer& tok) {
    MonoCorpus out;
    out.reserve(lines.size());
    for (const auto& line : lines) {
        auto ids = tok.encode(line);
        ids.push_back(Vocabulary::eos_id);
        out.push_back(std::move(ids));
    }
    return out;
}

std::size_t Batch::pad_count() const {
    std::size_t pads = 0;
    for (std::size_t i = 0; i < src.size(); ++i) pads += src[i].size() - src_len[i];
    for (std::size_t i = 0; i < tgt.size(); ++i) pads += tgt[i].size() - tgt_len[i];
    return pads;
}

std::size_t Batch::cell_count() const {
    std::size_t n = 0;
    for (const auto& row : src) n += row.size();
    for (const auto& row : tgt) n += row.size();
    return n;
}

namespace {

BatchResult bucket_batches(const std::vector<std::vector<int>>& srcs,
                           const std::vector<std::vector<int>>* tgts, int batch_size,
                           int max_len) {
    if (batch_size < 1) throw InvalidInputError("make_batches: batch_size must be >= 1");
    BatchResult result;
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < srcs.size(); ++i) {
        const std::size_t sl = srcs[i].size();
        const std::size_t tl = tgts ? (*tgts)[i].size() : 0;
        if (sl > static_cast<std::size_t>(max_len) || tl > static_cast<std::size_t>(max_len)) {
            ++result.filtered;
            continue;
        }
        order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const std::size_t la = srcs[a].size(), lb = srcs[b].size();
        if (la != lb) return la < lb;
        if (tgts) return (*tgts)[a].size() < (*tgts)[b].size();
        return false;
    });
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(batch_size));
        Batch b;
        std::size_t src_w = 0, tgt_w = 0;
        for (std::size_t i = at; i < end; ++i) {
            src_w = std::max(src_w, srcs[order[i]].size());
            if (tgts) tgt_w = std::max(tgt_w, (*tgts)[order[i]].size());
        }
        for (std::size_t i = at; i < end; ++i) {
            b.index.push_back(order[i]);
            std::vector<int> row = srcs[order[i]];
            b.src_len.push_back(row.size());
            row.resize(src_w, Vocabulary::pad_id);
            b.src.push_back(std::move(row));
            if (tgts) {
                std::vector<int> trow = (*tgts)[order[i]];
                b.tgt_len.push_back(trow.size());
                trow.resize(tgt_w, Vocabulary::pad_id);
                b.tgt.push_back(std::move(trow));
            }
        }
        result.batches.push_back(std::move(b));
    }
    return result;
}

} // namespace

BatchResult make_batches(const ParallelCorpus& corpus, int batch_size, int max_len) {
    std::vector<std::vector<int>> srcs, tgts;
    srcs.reserve(corpus.size());
    tgts.reserve(corpus.size());
    for (const auto& p : corpus) {
        srcs.push_back(p.src);
        tgts.push_back(p.tgt);
    }
    return bucket_batches(srcs, &tgts, batch_size, max_len);
}

BatchResult make_mono_batches(const MonoCorpus& corpus, int batch_size, int max_len) {
    return bucket_batches(corpus, nullptr, batch_size, max_len);
}

// ---- file I/O -------------------------------------------------------------------------

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& l : lines) out << l << "\n";
}

} // namespace apt
