#include "apt/model_config.hpp"

#include <set>

namespace apt {

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& context) {
    if (!j.is_object()) throw ConfigError(context + ": expected a JSON object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!ok.count(it.key()))
            throw ConfigError(context + ": unknown key \"" + it.key() + "\"");
    }
}

nlohmann::json ModelConfig::to_json() const {
    return {{"d_model", d_model},
            {"n_heads", n_heads},
            {"enc_depth", enc_depth},
            {"dec_depth", dec_depth},
            {"d_ff", d_ff},
            {"src_vocab", src_vocab},
            {"tgt_vocab", tgt_vocab},
            {"dropout", dropout},
            {"label_smoothing", label_smoothing},
            {"max_len", max_len}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    reject_unknown_keys(j,
                        {"d_model", "n_heads", "enc_depth", "dec_depth", "d_ff", "src_vocab",
                         "tgt_vocab", "dropout", "label_smoothing", "max_len"},
                        "model");
    ModelConfig c;
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.enc_depth = j.value("enc_depth", c.enc_depth);
    c.dec_depth = j.value("dec_depth", c.dec_depth);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.src_vocab = j.value("src_vocab", c.src_vocab);
    c.tgt_vocab = j.value("tgt_vocab", c.tgt_vocab);
    c.dropout = j.value("dropout", c.dropout);
    c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
    c.max_len = j.value("max_len", c.max_len);
    c.validate();
    return c;
}

} // namespace apt
