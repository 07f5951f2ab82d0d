#pragma once

#include <string>

#include <json.hpp>

#include "apt/error.hpp"

namespace apt {

// NMT student hyperparameters. Desk-scale defaults; the 512/8/6/2048 base
// geometry is preserved as ratios.
struct ModelConfig {
    int d_model = 64;
    int n_heads = 4;
    int enc_depth = 2;
    int dec_depth = 2;
    int d_ff = 128;
    int src_vocab = 512;
    int tgt_vocab = 512;
    double dropout = 0.1;
    double label_smoothing = 0.1;
    int max_len = 64;

    void validate() const {
        if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
            throw ConfigError("model: d_model must be a positive multiple of n_heads");
        if (d_model % 2 != 0) throw ConfigError("model: d_model must be even");
        if (enc_depth < 1 || dec_depth < 1) throw ConfigError("model: depths must be >= 1");
        if (d_ff <= 0) throw ConfigError("model: d_ff must be positive");
        if (src_vocab < 6 || tgt_vocab < 6)
            throw ConfigError("model: vocabularies must cover the reserved ids");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0,1)");
        if (label_smoothing < 0.0 || label_smoothing >= 1.0)
            throw ConfigError("model: label_smoothing must be in [0,1)");
        if (max_len < 1) throw ConfigError("model: max_len must be >= 1");
    }

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

// Rejects keys outside `allowed`; shared by every strict config parser.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& context);

} // namespace apt
