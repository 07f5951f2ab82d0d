#include <doctest.h>

#include <cmath>

#include "apt/distill.hpp"
#include "apt/rng.hpp"
#include "test_support.hpp"

using namespace apt;

TEST_CASE("one-hot teacher reduces word distillation to unsmoothed NLL") {
    DtypeGuard g(Dtype::f64);
    Rng rng(80);
    const std::size_t j = 4, v = 6;
    std::vector<double> lv(j * v);
    for (double& x : lv) x = rng.normal(0, 2);
    Tensor logits = Tensor::from_values({j, v}, lv);
    std::vector<int> ref{2, 0, 5, 1};
    std::vector<double> one_hot(j * v, 0.0);
    for (std::size_t r = 0; r < j; ++r) one_hot[r * v + std::size_t(ref[r])] = 1.0;
    Tensor teacher = Tensor::from_values({j, v}, one_hot);

    const double a = word_distill_loss(logits, teacher).item();
    const double b = translation_loss(logits, ref, 0.0).item();
    CHECK(std::abs(a - b) <= 1e-7);
}

TEST_CASE("matching teacher is a gradient fixed point and gives the entropy") {
    DtypeGuard g(Dtype::f64);
    Rng rng(81);
    const std::size_t j = 3, v = 5;
    std::vector<double> lv(j * v);
    for (double& x : lv) x = rng.normal(0, 1.5);
    Tensor logits = Tensor::from_values({j, v}, lv, true);
    Tensor teacher = detach(softmax(logits, -1));

    Tensor loss = word_distill_loss(logits, teacher);
    // loss equals the student's mean row entropy
    double entropy = 0.0;
    for (std::size_t r = 0; r < j; ++r)
        for (std::size_t k = 0; k < v; ++k) {
            const double p = teacher.values()[r * v + k];
            entropy -= p * std::log(p);
        }
    entropy /= double(j);
    CHECK(std::abs(loss.item() - entropy) <= 1e-9);

    backward(loss);
    for (double gv : logits.grad()) CHECK(std::abs(gv) <= 1e-9); // softmax - teacher = 0
}

TEST_CASE("word distillation equals the direct double sum") {
    DtypeGuard g(Dtype::f64);
    Tensor logits = Tensor::from_values({2, 3}, {0.2, -1.0, 0.7, 1.5, 0.5, -0.4});
    Tensor teacher = Tensor::from_values({2, 3}, {0.6, 0.3, 0.1, 0.25, 0.25, 0.5});
    double expect = 0.0;
    for (std::size_t r = 0; r < 2; ++r) {
        double mx = -1e300, z = 0;
        for (std::size_t k = 0; k < 3; ++k) mx = std::max(mx, logits.values()[r * 3 + k]);
        for (std::size_t k = 0; k < 3; ++k) z += std::exp(logits.values()[r * 3 + k] - mx);
        for (std::size_t k = 0; k < 3; ++k)
            expect -= teacher.values()[r * 3 + k] *
                      (logits.values()[r * 3 + k] - mx - std::log(z));
    }
    expect /= 2.0;
    CHECK(std::abs(word_distill_loss(logits, teacher).item() - expect) <= 1e-9);

    Tensor bad = Tensor::from_values({2, 3}, {0.6, 0.3, 0.3, 0.25, 0.25, 0.5});
    CHECK_THROWS_AS(word_distill_loss(logits, bad), InvalidInputError);
    CHECK_THROWS_AS(word_distill_loss(logits, Tensor::zeros({3, 3})), ShapeError);
}

TEST_CASE("sentence distillation closed forms") {
    DtypeGuard g(Dtype::f64);
    Tensor a = Tensor::from_values({3, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
    CHECK(sent_distill_loss(a, a).item() == 0.0);

    const double delta = 0.25;
    std::vector<double> shifted(a.values());
    for (double& x : shifted) x += delta;
    Tensor b = Tensor::from_values({3, 4}, shifted);
    CHECK(std::abs(sent_distill_loss(b, a).item() - 4 * delta * delta) <= 1e-9);

    Rng rng(82);
    std::vector<double> sv(12), tv(12);
    for (double& x : sv) x = rng.normal(0, 1);
    for (double& x : tv) x = rng.normal(0, 1);
    Tensor s = Tensor::from_values({3, 4}, sv);
    Tensor t = Tensor::from_values({3, 4}, tv);
    double expect = 0.0;
    for (std::size_t i = 0; i < 12; ++i) expect += (sv[i] - tv[i]) * (sv[i] - tv[i]);
    expect /= 3.0;
    CHECK(std::abs(sent_distill_loss(s, t).item() - expect) <= 1e-9);
}

TEST_CASE("sentence distillation rejects mismatched widths with guidance") {
    Tensor s = Tensor::zeros({2, 4});
    Tensor t = Tensor::zeros({2, 6});
    try {
        sent_distill_loss(s, t);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("matching model widths") != std::string::npos);
    }
}

TEST_CASE("sentence distillation never backpropagates into the teacher") {
    DtypeGuard g(Dtype::f64);
    Tensor student = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    Tensor teacher = Tensor::from_values({2, 3}, {0, 0, 1, 1, 0, 0}, true);
    backward(sent_distill_loss(student, teacher));
    CHECK(student.has_grad());
    CHECK(!teacher.has_grad());
}

TEST_CASE("joint loss composition and arithmetic") {
    Tensor lt = Tensor::scalar(1.0);
    Tensor ls = Tensor::scalar(0.4);
    Tensor lw = Tensor::scalar(0.6);
    LossBundle full = joint_loss(lt, ls, lw, 0.5, 0.5);
    CHECK(full.combined() == doctest::Approx(1.5).epsilon(1e-9));

    LossBundle bare = joint_loss(lt, std::nullopt, std::nullopt, 0.5, 0.5);
    CHECK(bare.combined() == 1.0);
    CHECK(bare.sentence() == 0.0);
    CHECK(bare.word() == 0.0);

    LossBundle zeroed = joint_loss(lt, ls, lw, 0.0, 0.0);
    CHECK(zeroed.combined() == 1.0);

    CHECK_THROWS_AS(joint_loss(lt, ls, lw, -0.1, 0.5), InvalidInputError);
}

TEST_CASE("joint loss gradient is the superposition of component gradients") {
    DtypeGuard g(Dtype::f64);
    Rng rng(83);
    Tensor w = normal_init({2, 3}, 1.0, rng);
    Tensor target = detach(normal_init({2, 3}, 1.0, rng));
    Tensor dist = detach(softmax(normal_init({2, 3}, 1.0, rng), -1));

    auto build = [&](int which) {
        Tensor l_t = mean_all(mul(w, w));
        Tensor l_s = sent_distill_loss(w, target);
        Tensor l_w = word_distill_loss(w, dist);
        if (which == 0) return joint_loss(l_t, l_s, l_w, 0.5, 0.5).total;
        if (which == 1) return l_t;
        if (which == 2) return l_s;
        return l_w;
    };

    w.clear_grad();
    backward(build(0));
    std::vector<double> combined = w.grad();

    std::vector<double> expect(w.size(), 0.0);
    const double weight[] = {1.0, 0.5, 0.5};
    for (int c = 1; c <= 3; ++c) {
        w.clear_grad();
        backward(build(c));
        for (std::size_t i = 0; i < w.size(); ++i) expect[i] += weight[c - 1] * w.grad()[i];
    }
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(combined[i] - expect[i]) <= 1e-6);
}

TEST_CASE("encoder sentence distillation delegates to the core loss") {
    DtypeGuard g(Dtype::f64);
    Rng rng(84);
    EncoderState enc;
    enc.layers.push_back(detach(normal_init({3, 4}, 1.0, rng)));
    enc.layers.push_back(normal_init({3, 4}, 1.0, rng));
    std::vector<Tensor> teacher{detach(normal_init({3, 4}, 1.0, rng)),
                                detach(normal_init({3, 4}, 1.0, rng))};
    CHECK(encoder_sent_distill(enc, teacher).item() ==
          sent_distill_loss(enc.layers.back(), teacher.back()).item());

    std::vector<Tensor> same{enc.layers.back()};
    CHECK(encoder_sent_distill(enc, same).item() == 0.0);
}
