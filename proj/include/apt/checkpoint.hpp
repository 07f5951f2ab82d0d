#pragma once

#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "apt/strategy.hpp"

namespace apt {

inline constexpr int kCheckpointVersion = 1;

// On-disk layout: 8-byte magic, little-endian u32 header length, the header
// JSON, then the raw little-endian value payload. The manifest inside the
// header records name/dtype/shape/offset/length per tensor in registration
// order; f32 values are stored as 4-byte floats (lossless, since f32 tensors
// live on the float grid), f64 as 8-byte doubles. Save -> load -> save is
// byte-identical.
struct CheckpointHeader {
    int format_version = kCheckpointVersion;
    std::string kind; // "nmt" | "teacher"
    nlohmann::json config;
    nlohmann::json metadata;
};

void save_checkpoint(const std::string& path, const CheckpointHeader& header,
                     const ParamList& tensors);

struct LoadedCheckpoint {
    CheckpointHeader header;
    std::vector<std::string> order;
    std::unordered_map<std::string, Tensor> tensors; // frozen leaves

    const Tensor& at(const std::string& name) const;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// FNV-1a over the whole file; the teacher-frozen check compares these.
std::uint64_t file_hash(const std::string& path);

// ---- model-level wrappers ------------------------------------------------------------

void save_teacher(const std::string& path, const TeacherModel& model,
                  const nlohmann::json& metadata);

// Returns a frozen teacher.
TeacherModel load_teacher(const std::string& path);

// Student checkpoints embed the frozen teachers that fusion needs at
// inference time, so a saved model translates without external teacher
// files. Distill-only teachers are train-time only and are not embedded.
struct StudentCheckpoint {
    ModelConfig model_cfg;
    IntegrationPlan plan;
    StudentModel student; // frozen parameters
    std::shared_ptr<TeacherModel> enc_teacher, dec_teacher; // present iff embedded
    nlohmann::json metadata;
};

void save_student(const std::string& path, const StudentModel& student,
                  const IntegrationPlan& plan, const Teachers& teachers,
                  const nlohmann::json& metadata);

StudentCheckpoint load_student(const std::string& path);

} // namespace apt
