#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "apt/checkpoint.hpp"

using namespace apt;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

TeacherModel tiny_teacher_model(TeacherKind kind, std::uint64_t seed) {
    TeacherConfig cfg;
    cfg.kind = kind;
    cfg.depth = 2;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_ff = 16;
    cfg.vocab = 12;
    cfg.language = kind == TeacherKind::masked ? "src" : "tgt";
    cfg.max_len = 12;
    Rng rng(seed);
    return build_teacher(cfg, rng);
}

} // namespace

TEST_CASE("teacher checkpoints round-trip values and bytes") {
    TeacherModel teacher = tiny_teacher_model(TeacherKind::causal, 7);
    save_teacher(tmp_path("ck_teacher.apt"), teacher, {{"note", "test"}});

    TeacherModel loaded = load_teacher(tmp_path("ck_teacher.apt"));
    CHECK(loaded.frozen());
    CHECK(loaded.cfg.vocab == teacher.cfg.vocab);
    auto a = teacher.named_params();
    auto b = loaded.named_params();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].tensor.values() == b[i].tensor.values());

    save_teacher(tmp_path("ck_teacher2.apt"), loaded, {{"note", "test"}});
    CHECK(slurp(tmp_path("ck_teacher.apt")) == slurp(tmp_path("ck_teacher2.apt"))); // byte-identical
    CHECK(file_hash(tmp_path("ck_teacher.apt")) == file_hash(tmp_path("ck_teacher2.apt")));
}

TEST_CASE("student checkpoints embed fusion teachers and round-trip") {
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.enc_depth = 2;
    cfg.dec_depth = 2;
    cfg.d_ff = 16;
    cfg.src_vocab = 12;
    cfg.tgt_vocab = 12;
    cfg.dropout = 0.0;
    cfg.max_len = 12;

    Teachers teachers;
    teachers.encoder = std::make_shared<TeacherModel>(tiny_teacher_model(TeacherKind::masked, 8));
    teachers.decoder = std::make_shared<TeacherModel>(tiny_teacher_model(TeacherKind::causal, 9));
    teachers.encoder->freeze();
    teachers.decoder->freeze();

    IntegrationPlan plan = IntegrationPlan::recommended();
    Rng rng(10);
    StudentModel student = build_student(plan, cfg, teachers, rng, false);
    save_student(tmp_path("ck_student.apt"), student, plan, teachers, {{"k", 1}});

    StudentCheckpoint loaded = load_student(tmp_path("ck_student.apt"));
    CHECK(loaded.enc_teacher != nullptr); // fusion teacher embedded
    CHECK(loaded.dec_teacher == nullptr); // distill-only teacher is not
    CHECK(loaded.student.enc_fusion.has_value());
    CHECK(loaded.plan.to_json() == plan.to_json());

    auto a = student.named_params();
    auto b = loaded.student.named_params();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        CHECK(a[i].tensor.values() == b[i].tensor.values());
    }

    // byte identity through a full load/save cycle
    Teachers embed_again{loaded.enc_teacher, nullptr};
    save_student(tmp_path("ck_student2.apt"), loaded.student, loaded.plan, embed_again, loaded.metadata);
    CHECK(slurp(tmp_path("ck_student.apt")) == slurp(tmp_path("ck_student2.apt")));

    // the frozen source teacher reproduces its outputs through the cycle
    auto reps_a = teacher_representations(*teachers.encoder, {5, 6, 2});
    auto reps_b = teacher_representations(*loaded.enc_teacher, {5, 6, 2});
    CHECK(reps_a.back().values() == reps_b.back().values());
}

TEST_CASE("version and manifest corruption are refused") {
    TeacherModel teacher = tiny_teacher_model(TeacherKind::causal, 11);
    save_teacher(tmp_path("ck_tamper.apt"), teacher, {});

    // rewrite the header with a bumped format_version
    std::string raw = slurp(tmp_path("ck_tamper.apt"));
    std::uint32_t head_len;
    std::memcpy(&head_len, raw.data() + 8, 4);
    nlohmann::json head = nlohmann::json::parse(raw.substr(12, head_len));
    std::string payload = raw.substr(12 + head_len);

    auto rewrite = [&](const nlohmann::json& new_head, const std::string& path) {
        std::string head_str = new_head.dump();
        std::ofstream out(path, std::ios::binary);
        out.write(raw.data(), 8);
        std::uint32_t len = static_cast<std::uint32_t>(head_str.size());
        out.write(reinterpret_cast<const char*>(&len), 4);
        out.write(head_str.data(), static_cast<std::streamsize>(head_str.size()));
        out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    };

    nlohmann::json bumped = head;
    bumped["format_version"] = kCheckpointVersion + 1;
    rewrite(bumped, tmp_path("ck_bad_version.apt"));
    CHECK_THROWS_AS(load_checkpoint(tmp_path("ck_bad_version.apt")), ConfigError);

    nlohmann::json overlapped = head;
    overlapped["manifest"][1]["byte_offset"] = 0; // overlaps the first tensor
    rewrite(overlapped, tmp_path("ck_bad_manifest.apt"));
    CHECK_THROWS_AS(load_checkpoint(tmp_path("ck_bad_manifest.apt")), ConfigError);

    std::ofstream junk(tmp_path("ck_junk.apt"), std::ios::binary);
    junk << "not a checkpoint";
    junk.close();
    CHECK_THROWS_AS(load_checkpoint(tmp_path("ck_junk.apt")), ConfigError);
}
