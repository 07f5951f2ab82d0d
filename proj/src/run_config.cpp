#include "apt/run_config.hpp"

#include <fstream>

namespace apt {

nlohmann::json RunConfig::to_json() const {
    return {{"seed", seed},
            {"model", model.to_json()},
            {"plan", plan.to_json()},
            {"trainer", trainer.to_json()},
            {"pretrain", pretrain.to_json()},
            {"teacher", teacher_shape.to_json()},
            {"data", {{"dir", data.dir}}},
            {"teachers",
             {{"encoder", encoder_teacher_ckpt}, {"decoder", decoder_teacher_ckpt}}}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    reject_unknown_keys(
        j, {"seed", "model", "plan", "trainer", "pretrain", "teacher", "data", "teachers"},
        "config");
    RunConfig c;
    c.seed = j.value("seed", c.seed);
    if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
    if (j.contains("plan")) c.plan = IntegrationPlan::from_json(j.at("plan"));
    if (j.contains("trainer")) c.trainer = TrainerConfig::from_json(j.at("trainer"));
    if (j.contains("pretrain")) c.pretrain = PretrainConfig::from_json(j.at("pretrain"));
    if (j.contains("teacher")) c.teacher_shape = TeacherConfig::from_json(j.at("teacher"));
    if (j.contains("data")) {
        reject_unknown_keys(j.at("data"), {"dir"}, "data");
        c.data.dir = j.at("data").value("dir", "");
    }
    if (j.contains("teachers")) {
        reject_unknown_keys(j.at("teachers"), {"encoder", "decoder"}, "teachers");
        c.encoder_teacher_ckpt = j.at("teachers").value("encoder", "");
        c.decoder_teacher_ckpt = j.at("teachers").value("decoder", "");
    }
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError(path + " is not valid JSON");
    return from_json(j);
}

Tokenizer load_tokenizer(const DataPaths& data, const std::string& side, int vocab_cap) {
    Tokenizer tok;
    tok.bpe = BpeModel::load(data.bpe(side));
    tok.vocab = Vocabulary::load(data.vocab(side));
    if (tok.vocab.size() > vocab_cap)
        throw ConfigError("vocabulary " + data.vocab(side) + " has " +
                          std::to_string(tok.vocab.size()) + " entries, over the configured cap " +
                          std::to_string(vocab_cap));
    return tok;
}

} // namespace apt
