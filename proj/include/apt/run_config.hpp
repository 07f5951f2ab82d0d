#pragma once

#include <string>

#include "apt/pretrain.hpp"
#include "apt/strategy.hpp"
#include "apt/trainer.hpp"

namespace apt {

// Conventional file names inside a datagen output directory.
struct DataPaths {
    std::string dir;

    std::string train_src() const { return dir + "/train.src"; }
    std::string train_tgt() const { return dir + "/train.tgt"; }
    std::string valid_src() const { return dir + "/valid.src"; }
    std::string valid_tgt() const { return dir + "/valid.tgt"; }
    std::string test_src() const { return dir + "/test.src"; }
    std::string test_tgt() const { return dir + "/test.tgt"; }
    std::string mono(const std::string& side) const { return dir + "/mono." + side; }
    std::string bpe(const std::string& side) const { return dir + "/bpe." + side; }
    std::string vocab(const std::string& side) const { return dir + "/vocab." + side; }
    std::string meta() const { return dir + "/meta.json"; }
};

// Top-level experiment configuration. Strictly parsed: unknown keys are
// rejected at every level before any work starts.
struct RunConfig {
    std::uint64_t seed = 1;
    ModelConfig model;
    IntegrationPlan plan;
    TrainerConfig trainer;
    PretrainConfig pretrain;     // used by the pretrain command
    TeacherConfig teacher_shape; // kind/language/vocab are overridden per run
    DataPaths data;
    std::string encoder_teacher_ckpt; // empty = not provided
    std::string decoder_teacher_ckpt;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::string& path);
};

// Side tokenizer loaded from a datagen directory.
Tokenizer load_tokenizer(const DataPaths& data, const std::string& side, int vocab_cap);

} // namespace apt
