#include "apt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

namespace apt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'A', 'P', 'T', 'C', 'K', 'P', 'T', '\n'};

std::size_t dtype_bytes(Dtype d) { return d == Dtype::f32 ? 4 : 8; }

void append_tensor_bytes(std::string& payload, const Tensor& t) {
    if (t.dtype() == Dtype::f32) {
        for (double v : t.values()) {
            const float f = static_cast<float>(v);
            payload.append(reinterpret_cast<const char*>(&f), 4);
        }
    } else {
        for (double v : t.values()) payload.append(reinterpret_cast<const char*>(&v), 8);
    }
}

} // namespace

void save_checkpoint(const std::string& path, const CheckpointHeader& header,
                     const ParamList& tensors) {
    nlohmann::json manifest = nlohmann::json::array();
    std::string payload;
    for (const auto& p : tensors) {
        const std::size_t offset = payload.size();
        append_tensor_bytes(payload, p.tensor);
        manifest.push_back({{"name", p.name},
                            {"dtype", dtype_name(p.tensor.dtype())},
                            {"shape", p.tensor.shape()},
                            {"byte_offset", offset},
                            {"byte_length", payload.size() - offset}});
    }
    nlohmann::json head{{"format_version", header.format_version},
                        {"kind", header.kind},
                        {"config", header.config},
                        {"manifest", manifest},
                        {"metadata", header.metadata}};
    const std::string head_str = head.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write(kMagic, 8);
    const std::uint32_t len = static_cast<std::uint32_t>(head_str.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(head_str.data(), static_cast<std::streamsize>(head_str.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw IoError("short write to " + path);
}

const Tensor& LoadedCheckpoint::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end())
        throw ConfigError("checkpoint is missing tensor \"" + name + "\"");
    return it->second;
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw ConfigError(path + " is not a checkpoint file");
    std::uint32_t head_len = 0;
    in.read(reinterpret_cast<char*>(&head_len), 4);
    std::string head_str(head_len, '\0');
    in.read(head_str.data(), head_len);
    if (!in) throw ConfigError(path + ": truncated header");
    nlohmann::json head = nlohmann::json::parse(head_str, nullptr, false);
    if (head.is_discarded()) throw ConfigError(path + ": header is not valid JSON");

    LoadedCheckpoint ck;
    ck.header.format_version = head.value("format_version", -1);
    if (ck.header.format_version != kCheckpointVersion)
        throw ConfigError(path + ": format_version " +
                          std::to_string(ck.header.format_version) + " is not supported (want " +
                          std::to_string(kCheckpointVersion) + ")");
    ck.header.kind = head.value("kind", "");
    ck.header.config = head.value("config", nlohmann::json::object());
    ck.header.metadata = head.value("metadata", nlohmann::json::object());

    std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t expected_end = 0;
    for (const auto& entry : head.at("manifest")) {
        const std::string name = entry.at("name").get<std::string>();
        const Dtype dtype = dtype_from_name(entry.at("dtype").get<std::string>());
        Shape shape = entry.at("shape").get<Shape>();
        const std::size_t offset = entry.at("byte_offset").get<std::size_t>();
        const std::size_t length = entry.at("byte_length").get<std::size_t>();
        std::size_t numel = 1;
        for (std::size_t d : shape) numel *= d;
        if (length != numel * dtype_bytes(dtype))
            throw ConfigError(path + ": manifest entry " + name + " has inconsistent length");
        if (offset != expected_end)
            throw ConfigError(path + ": manifest offsets overlap or leave gaps at " + name);
        expected_end = offset + length;
        if (expected_end > payload.size())
            throw ConfigError(path + ": manifest entry " + name + " exceeds the payload");

        std::vector<double> values(numel);
        const char* src = payload.data() + offset;
        if (dtype == Dtype::f32) {
            for (std::size_t i = 0; i < numel; ++i) {
                float f;
                std::memcpy(&f, src + i * 4, 4);
                values[i] = static_cast<double>(f);
            }
        } else {
            std::memcpy(values.data(), src, numel * 8);
        }
        ck.order.push_back(name);
        ck.tensors.emplace(name, Tensor::from_values(std::move(shape), std::move(values), dtype,
                                                     false));
    }
    if (expected_end != payload.size())
        throw ConfigError(path + ": payload has trailing bytes beyond the manifest");
    return ck;
}

std::uint64_t file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    std::uint64_t h = 1469598103934665603ULL;
    char buf[1 << 15];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
        if (!in) break;
    }
    return h;
}

// ---- model-level wrappers ------------------------------------------------------------

namespace {

// Copies checkpoint values into freshly built parameters by name, recording
// each consumed manifest entry so callers can verify completeness.
void assign_params(const ParamList& params, const LoadedCheckpoint& ck, const std::string& prefix,
                   std::set<std::string>& consumed) {
    for (const auto& p : params) {
        const std::string name = prefix + p.name;
        const Tensor& src = ck.at(name);
        Tensor dst = p.tensor;
        if (src.shape() != dst.shape())
            throw ConfigError("checkpoint tensor " + name + " has shape " +
                              shape_str(src.shape()) + ", model wants " + shape_str(dst.shape()));
        dst.leaf_values() = src.values();
        dst.enforce_dtype();
        consumed.insert(name);
    }
}

void require_fully_consumed(const LoadedCheckpoint& ck, const std::set<std::string>& consumed) {
    for (const auto& name : ck.order)
        if (!consumed.count(name))
            throw ConfigError("checkpoint tensor \"" + name + "\" is not part of this model");
}

TeacherModel rebuild_teacher(const TeacherConfig& cfg, const LoadedCheckpoint& ck,
                             const std::string& prefix, std::set<std::string>& consumed) {
    Rng scratch(0); // values are overwritten wholesale
    TeacherModel model = build_teacher(cfg, scratch);
    assign_params(model.named_params(), ck, prefix, consumed);
    model.freeze();
    return model;
}

} // namespace

void save_teacher(const std::string& path, const TeacherModel& model,
                  const nlohmann::json& metadata) {
    CheckpointHeader header;
    header.kind = "teacher";
    header.config = model.cfg.to_json();
    header.metadata = metadata;
    save_checkpoint(path, header, model.named_params());
}

TeacherModel load_teacher(const std::string& path) {
    LoadedCheckpoint ck = load_checkpoint(path);
    if (ck.header.kind != "teacher")
        throw ConfigError(path + " holds a \"" + ck.header.kind + "\" model, expected a teacher");
    std::set<std::string> consumed;
    TeacherModel model =
        rebuild_teacher(TeacherConfig::from_json(ck.header.config), ck, "", consumed);
    require_fully_consumed(ck, consumed);
    return model;
}

void save_student(const std::string& path, const StudentModel& student,
                  const IntegrationPlan& plan, const Teachers& teachers,
                  const nlohmann::json& metadata) {
    CheckpointHeader header;
    header.kind = "nmt";
    nlohmann::json config{{"model", student.nmt.cfg.to_json()}, {"plan", plan.to_json()}};

    ParamList tensors = student.named_params();
    // fusion needs its teacher at inference; embed those teachers
    if (student.enc_fusion.has_value() && !teachers.encoder)
        throw ConfigError("save_student: encoder fusion bank without its teacher");
    if (student.dec_fusion.has_value() && !teachers.decoder)
        throw ConfigError("save_student: decoder fusion bank without its teacher");
    const bool embed_enc = student.enc_fusion.has_value() && teachers.encoder;
    const bool embed_dec = student.dec_fusion.has_value() && teachers.decoder;
    if (embed_enc) {
        config["encoder_teacher"] = teachers.encoder->cfg.to_json();
        append_params(tensors, "encoder_teacher", teachers.encoder->named_params());
    }
    if (embed_dec) {
        config["decoder_teacher"] = teachers.decoder->cfg.to_json();
        append_params(tensors, "decoder_teacher", teachers.decoder->named_params());
    }
    header.config = config;
    header.metadata = metadata;
    save_checkpoint(path, header, tensors);
}

StudentCheckpoint load_student(const std::string& path) {
    LoadedCheckpoint ck = load_checkpoint(path);
    if (ck.header.kind != "nmt")
        throw ConfigError(path + " holds a \"" + ck.header.kind + "\" model, expected nmt");

    StudentCheckpoint out;
    out.model_cfg = ModelConfig::from_json(ck.header.config.at("model"));
    out.plan = IntegrationPlan::from_json(ck.header.config.at("plan"));
    out.metadata = ck.header.metadata;

    std::set<std::string> consumed;
    if (ck.header.config.contains("encoder_teacher"))
        out.enc_teacher = std::make_shared<TeacherModel>(rebuild_teacher(
            TeacherConfig::from_json(ck.header.config.at("encoder_teacher")), ck,
            "encoder_teacher.", consumed));
    if (ck.header.config.contains("decoder_teacher"))
        out.dec_teacher = std::make_shared<TeacherModel>(rebuild_teacher(
            TeacherConfig::from_json(ck.header.config.at("decoder_teacher")), ck,
            "decoder_teacher.", consumed));

    Teachers teachers;
    teachers.encoder = out.enc_teacher;
    teachers.decoder = out.dec_teacher;
    Rng scratch(0);
    // finetune initialization is a training-time concern; structurally the
    // student is a baseline, and all values come from the manifest anyway
    IntegrationPlan build_plan = out.plan;
    if (build_plan.mode == PlanMode::finetune) build_plan.mode = PlanMode::baseline;
    out.student = build_student(build_plan, out.model_cfg, teachers, scratch, false);
    assign_params(out.student.named_params(), ck, "", consumed);
    require_fully_consumed(ck, consumed);
    for (const auto& p : out.student.named_params()) {
        Tensor t = p.tensor;
        t.set_requires_grad(false); // loaded students are inference views
    }
    return out;
}

} // namespace apt
