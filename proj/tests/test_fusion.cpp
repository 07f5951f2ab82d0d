#include <doctest.h>

#include <cmath>

#include "apt/fusion.hpp"
#include "test_support.hpp"

using namespace apt;

namespace {

TeacherConfig fusion_teacher_cfg(int d_p, int vocab) {
    TeacherConfig cfg;
    cfg.kind = TeacherKind::masked;
    cfg.depth = 2;
    cfg.d_model = d_p;
    cfg.n_heads = 2;
    cfg.d_ff = d_p * 2;
    cfg.vocab = vocab;
    cfg.language = "src";
    cfg.max_len = 16;
    cfg.dropout = 0.0;
    return cfg;
}

ModelConfig fusion_student_cfg() {
    ModelConfig cfg;
    cfg.d_model = 4;
    cfg.n_heads = 1;
    cfg.enc_depth = 2;
    cfg.dec_depth = 1;
    cfg.d_ff = 8;
    cfg.src_vocab = 12;
    cfg.tgt_vocab = 12;
    cfg.dropout = 0.0;
    cfg.label_smoothing = 0.0;
    cfg.max_len = 16;
    return cfg;
}

void randomize(Tensor t, double stddev, Rng& rng) {
    for (double& v : t.leaf_values()) v = rng.normal(0.0, stddev);
    t.enforce_dtype();
}

} // namespace

TEST_CASE("zero-initialized adapters map everything to zero") {
    Rng rng(50);
    FusionBank bank = build_fusion_bank(2, 6, 4, {0, 1, 2}, rng);
    std::vector<Tensor> teacher{Tensor::from_values({3, 6}, std::vector<double>(18, 1.25)),
                                Tensor::from_values({3, 6}, std::vector<double>(18, -0.7))};
    auto adapted = adapt(teacher, bank);
    REQUIRE(adapted.size() == 2);
    for (const auto& t : adapted) {
        CHECK(t.shape() == Shape{3, 4}); // width is d_model regardless of d_P
        for (double v : t.values()) CHECK(v == 0.0);
    }
    CHECK_THROWS_AS(adapt({teacher[0]}, bank), ShapeError);
}

TEST_CASE("adapter matches a hand-computed two-layer map") {
    DtypeGuard g(Dtype::f64);
    Rng rng(51);
    FusionBank bank = build_fusion_bank(1, 3, 2, {0}, rng);
    randomize(bank.adapters[0].w2, 0.5, rng);
    randomize(bank.adapters[0].b2, 0.5, rng);
    randomize(bank.adapters[0].b1, 0.5, rng);
    Tensor in = Tensor::from_values({1, 3}, {0.3, -1.2, 0.8});
    Tensor out = adapt({in}, bank)[0];

    const auto& w1 = bank.adapters[0].w1.values();
    const auto& b1 = bank.adapters[0].b1.values();
    const auto& w2 = bank.adapters[0].w2.values();
    const auto& b2 = bank.adapters[0].b2.values();
    std::vector<double> h(2, 0.0);
    for (std::size_t j = 0; j < 2; ++j) {
        for (std::size_t i = 0; i < 3; ++i) h[j] += in.values()[i] * w1[i * 2 + j];
        h[j] = std::max(h[j] + b1[j], 0.0);
    }
    for (std::size_t j = 0; j < 2; ++j) {
        double e = b2[j];
        for (std::size_t i = 0; i < 2; ++i) e += h[i] * w2[i * 2 + j];
        CHECK(std::abs(out.values()[j] - e) <= 1e-6);
    }
}

TEST_CASE("layer attention with one source is the identity") {
    Rng rng(52);
    FusionBank bank = build_fusion_bank(1, 4, 4, {0}, rng);
    Tensor adapted = Tensor::from_values({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor student = Tensor::from_values({2, 4}, {0.5, 0.25, -1, 2, 0, 1, 1, 0});
    auto res = layer_attention({adapted}, student, bank);
    CHECK(res.alpha.item() == 1.0);
    CHECK(res.composite.values() == adapted.values());
}

TEST_CASE("identical adapted layers attract uniform attention") {
    DtypeGuard g(Dtype::f64);
    Rng rng(53);
    FusionBank bank = build_fusion_bank(3, 4, 4, {0}, rng);
    Tensor shared = Tensor::from_values({2, 4}, {1, -2, 0.5, 3, 0.1, 0.2, 0.3, 0.4});
    Tensor student = Tensor::from_values({2, 4}, {2, 1, 0, -1, 1, 1, 1, 1});
    auto res = layer_attention({shared, shared, shared}, student, bank);
    for (double a : res.alpha.values()) CHECK(a == doctest::Approx(1.0 / 3).epsilon(1e-9));
    for (std::size_t i = 0; i < shared.size(); ++i)
        CHECK(res.composite.values()[i] == doctest::Approx(shared.values()[i]).epsilon(1e-6));
}

TEST_CASE("layer attention matches an independent straight-line oracle") {
    DtypeGuard g(Dtype::f64);
    Rng rng(54);
    FusionBank bank = build_fusion_bank(3, 4, 4, {0}, rng);
    randomize(bank.layer_score_b, 0.3, rng);
    std::vector<Tensor> adapted;
    for (int l = 0; l < 3; ++l) {
        std::vector<double> v(2 * 4);
        for (double& x : v) x = rng.normal(0, 1);
        adapted.push_back(Tensor::from_values({2, 4}, v));
    }
    std::vector<double> sv(2 * 4);
    for (double& x : sv) x = rng.normal(0, 1);
    Tensor student = Tensor::from_values({2, 4}, sv);
    auto res = layer_attention(adapted, student, bank);

    // oracle
    std::vector<double> smean(4, 0.0);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 4; ++j) smean[j] += sv[i * 4 + j] / 2.0;
    std::vector<double> e(3);
    for (int l = 0; l < 3; ++l) {
        std::vector<double> tmean(4, 0.0);
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                tmean[j] += adapted[l].values()[i * 4 + j] / 2.0;
        double score = bank.layer_score_b.values()[0];
        for (std::size_t j = 0; j < 4; ++j)
            score += tmean[j] * smean[j] * bank.layer_score_w.values()[j];
        e[l] = score;
    }
    const double mx = std::max({e[0], e[1], e[2]});
    double z = 0;
    for (double& x : e) z += (x = std::exp(x - mx));
    std::vector<double> comp(2 * 4, 0.0);
    for (int l = 0; l < 3; ++l) {
        const double a = e[l] / z;
        CHECK(std::abs(res.alpha.values()[l] - a) <= 1e-6);
        for (std::size_t i = 0; i < 8; ++i) comp[i] += a * adapted[l].values()[i];
    }
    CHECK(testsup::max_abs_diff(res.composite.values(), comp) <= 1e-6);
}

TEST_CASE("gate behavior at forced scorer outputs") {
    Rng rng(55);
    FusionBank bank = build_fusion_bank(1, 4, 4, {0}, rng);
    Tensor student = Tensor::from_values({3, 4}, std::vector<double>(12, 0.4));
    Tensor composite = Tensor::from_values({3, 4}, std::vector<double>(12, 1.5));

    // scorer forced to zero -> gamma = sigmoid(0) = 0.5
    std::fill(bank.gate_w.leaf_values().begin(), bank.gate_w.leaf_values().end(), 0.0);
    auto half = gate_fuse(student, composite, bank);
    for (double gv : half.gates.values()) CHECK(gv == 0.5);

    // strongly negative bias saturates the gate shut
    bank.gate_b.leaf_values()[0] = -20.0;
    auto shut = gate_fuse(student, composite, bank);
    double max_gate = 0, max_shift = 0, max_c = 0;
    for (double gv : shut.gates.values()) max_gate = std::max(max_gate, gv);
    for (std::size_t i = 0; i < student.size(); ++i) {
        max_shift = std::max(max_shift, std::abs(shut.fused.values()[i] - student.values()[i]));
        max_c = std::max(max_c, std::abs(composite.values()[i]));
    }
    CHECK(max_gate <= 1e-8);
    CHECK(max_shift <= 1e-7 * max_c);
}

TEST_CASE("zero composite leaves the student state untouched") {
    Rng rng(56);
    FusionBank bank = build_fusion_bank(1, 4, 4, {0}, rng);
    Tensor student = Tensor::from_values({2, 4}, {0.3, -1, 2, 0.25, 1, 1, -2, 0.5});
    Tensor zero = Tensor::zeros({2, 4});
    auto res = gate_fuse(student, zero, bank);
    CHECK(res.fused.values() == student.values());
    CHECK_THROWS_AS(gate_fuse(student, Tensor::zeros({2, 5}), bank), ShapeError);
}

TEST_CASE("fused encode reduces to plain encode without attachments or with shut gates") {
    Rng rng(57);
    TransformerModel model = build_transformer(fusion_student_cfg(), rng);
    Rng trng(58);
    TeacherModel teacher = build_teacher(fusion_teacher_cfg(6, 12), trng);
    teacher.freeze();
    std::vector<int> x{5, 6, 7, 2};

    Rng brng(59);
    FusionBank empty_bank = build_fusion_bank(2, 6, 4, {}, brng);
    EncoderState plain = encode(model, x);
    EncoderState fused = fused_encode(model, x, teacher, empty_bank);
    for (std::size_t l = 0; l < plain.layers.size(); ++l)
        CHECK(plain.layers[l].values() == fused.layers[l].values()); // bit-identical

    FusionBank shut = build_fusion_bank(2, 6, 4, {0, 1, 2}, brng);
    for (auto& a : shut.adapters) {
        randomize(a.w2, 0.5, brng);
        randomize(a.b2, 0.5, brng);
    }
    shut.gate_override = 0.0;
    EncoderState gated = fused_encode(model, x, teacher, shut);
    for (std::size_t l = 0; l < plain.layers.size(); ++l)
        CHECK(plain.layers[l].values() == gated.layers[l].values());
}

TEST_CASE("zero-knowledge identity from zero-initialized adapters") {
    Rng rng(60);
    TransformerModel model = build_transformer(fusion_student_cfg(), rng);
    Rng trng(61);
    TeacherModel teacher = build_teacher(fusion_teacher_cfg(6, 12), trng);
    teacher.freeze();
    Rng brng(62);
    FusionBank bank = build_fusion_bank(2, 6, 4, {0, 1, 2}, brng);

    Rng data_rng(63);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> x;
        const int len = data_rng.uniform_int(1, 8);
        for (int i = 0; i < len; ++i) x.push_back(data_rng.uniform_int(5, 11));
        EncoderState plain = encode(model, x);
        FusionTrace trace;
        EncoderState fused = fused_encode(model, x, teacher, bank, {}, &trace);
        for (std::size_t l = 0; l < plain.layers.size(); ++l)
            CHECK(testsup::max_abs_diff(plain.layers[l].values(), fused.layers[l].values()) <=
                  1e-6);
        CHECK(trace.layers.size() == 3);
        CHECK(trace.max_alpha_dev() <= 1e-6);
        for (const auto& rec : trace.layers)
            for (double gv : rec.gates.values()) {
                CHECK(gv > 0.0);
                CHECK(gv < 1.0);
            }
    }
}

TEST_CASE("ablated layer attention averages the adapted layers") {
    DtypeGuard g(Dtype::f64);
    Rng rng(64);
    TransformerModel model = build_transformer(fusion_student_cfg(), rng);
    Rng trng(65);
    TeacherModel teacher = build_teacher(fusion_teacher_cfg(6, 12), trng);
    teacher.freeze();
    Rng brng(66);
    FusionBank bank = build_fusion_bank(2, 6, 4, {1}, brng);
    for (auto& a : bank.adapters) {
        randomize(a.w2, 0.6, brng);
        randomize(a.b2, 0.6, brng);
    }
    bank.ablate_layer_attention = true;

    std::vector<int> x{5, 6, 7};
    auto reps = teacher_representations(teacher, x);
    auto adapted = adapt(reps, bank);
    FusionTrace trace;
    fused_encode(model, x, teacher, bank, {}, &trace);
    REQUIRE(trace.layers.size() == 1);
    for (std::size_t i = 0; i < adapted[0].size(); ++i) {
        const double mean = 0.5 * (adapted[0].values()[i] + adapted[1].values()[i]);
        CHECK(trace.layers[0].composite.values()[i] == doctest::Approx(mean).epsilon(1e-9));
    }
    for (double a : trace.layers[0].alpha.values()) CHECK(a == 0.5);
}

TEST_CASE("gradients reach the bank but never the frozen teacher") {
    Rng rng(67);
    TransformerModel model = build_transformer(fusion_student_cfg(), rng);
    Rng trng(68);
    TeacherModel teacher = build_teacher(fusion_teacher_cfg(6, 12), trng);
    teacher.freeze();
    Rng brng(69);
    FusionBank bank = build_fusion_bank(2, 6, 4, {1}, brng);
    for (auto& a : bank.adapters) randomize(a.w2, 0.5, brng);

    std::vector<int> x{5, 6, 7, 2};
    EncoderState st = fused_encode(model, x, teacher, bank);
    Tensor out = st.layers.back();
    backward(mean_all(mul(out, out)));
    for (const auto& p : bank.named_params()) CHECK(p.tensor.has_grad());
    for (const auto& p : teacher.named_params()) CHECK(!p.tensor.has_grad());
}

TEST_CASE("gradient check through the full fusion path") {
    DtypeGuard g(Dtype::f64);
    Rng rng(70);
    TransformerModel model = build_transformer(fusion_student_cfg(), rng);
    Rng trng(71);
    TeacherModel teacher = build_teacher(fusion_teacher_cfg(6, 12), trng);
    teacher.freeze();
    Rng brng(72);
    FusionBank bank = build_fusion_bank(2, 6, 4, {0, 1, 2}, brng);
    for (auto& a : bank.adapters) {
        randomize(a.w2, 0.4, brng);
        randomize(a.b2, 0.4, brng);
    }

    std::vector<int> x{5, 6, 7};
    std::vector<int> tgt_in{1, 8, 9};
    std::vector<int> tgt_ref{8, 9, 2};
    auto make_loss = [&]() {
        EncoderState enc = fused_encode(model, x, teacher, bank);
        DecodeResult res = decode(model, tgt_in, enc);
        return translation_loss(res.logits, tgt_ref, 0.1);
    };
    ParamList params = model.named_params();
    append_params(params, "fusion", bank.named_params());
    Rng pick(73);
    CHECK(testsup::fd_max_rel_err(make_loss, params, 3, pick) <= 1e-4);
}

TEST_CASE("decoder-side fusion runs and responds to the bank") {
    Rng rng(74);
    TransformerModel model = build_transformer(fusion_student_cfg(), rng);
    TeacherConfig tc = fusion_teacher_cfg(6, 12);
    tc.kind = TeacherKind::causal;
    tc.language = "tgt";
    Rng trng(75);
    TeacherModel teacher = build_teacher(tc, trng);
    teacher.freeze();
    Rng brng(76);
    FusionBank bank = build_fusion_bank(2, 6, 4, {1}, brng);

    std::vector<int> x{5, 6};
    EncoderState enc = encode(model, x);
    std::vector<int> tgt_in{1, 8, 9};
    Tensor plain = decode(model, tgt_in, enc).logits;
    Tensor fused_zero = fused_decode(model, tgt_in, enc, teacher, bank).logits;
    CHECK(testsup::max_abs_diff(plain.values(), fused_zero.values()) <= 1e-6);

    for (auto& a : bank.adapters) {
        randomize(a.w2, 0.8, brng);
        randomize(a.b2, 0.8, brng);
    }
    Tensor fused_live = fused_decode(model, tgt_in, enc, teacher, bank).logits;
    CHECK(testsup::max_abs_diff(plain.values(), fused_live.values()) > 1e-6);
}
