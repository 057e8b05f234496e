#include <doctest.h>

#include <array>
#include <cmath>

#include "nxl/gradients.hpp"
#include "test_util.hpp"

using namespace nxl;
using nxl_test::make_seq;
using nxl_test::toy_model;

namespace {

double max_rel_err(const Matrix& got, const Matrix& expect) {
    double worst = 0.0;
    for (std::size_t i = 0; i < got.data.size(); ++i) {
        const double denom = std::max(1e-8, std::fabs(expect.data[i]));
        worst = std::max(worst, std::fabs(got.data[i] - expect.data[i]) / denom);
    }
    return worst;
}

} // namespace

TEST_CASE("constant head yields zero input gradients") {
    ModelSnapshot snap = toy_model(1, 1, 4, 200);
    for (double& x : snap.classification_head->w.data) x = 0.0;
    const GradientField field =
        input_gradients(snap, make_seq({1, 2, 3}), ScalarTarget::class_logit(1));
    for (double g : field.grads.data) CHECK(g == 0.0);
}

TEST_CASE("zero-layer classification gradient is the head row at CLS") {
    const ModelSnapshot snap = toy_model(0, 1, 4, 201);
    const TokenSequence seq = make_seq({2, 5, 1});
    for (int c = 0; c < 3; ++c) {
        const GradientField field = input_gradients(snap, seq, ScalarTarget::class_logit(c));
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 4; ++j) {
                // Only the CLS row feeds the head; everything else is dead.
                const double expect = i == 0 ? snap.classification_head->w.at(c, j) : 0.0;
                CHECK(field.grads.at(i, j) == doctest::Approx(expect).epsilon(1e-14));
            }
        }
    }
}

TEST_CASE("zero-layer regression gradient is the head weight vector") {
    const ModelSnapshot snap = toy_model(0, 1, 4, 202);
    const GradientField field =
        input_gradients(snap, make_seq({3, 4}), ScalarTarget::regression());
    for (int j = 0; j < 4; ++j) {
        CHECK(field.grads.at(0, j) == doctest::Approx(snap.regression_head->w[j]).epsilon(1e-14));
        CHECK(field.grads.at(1, j) == 0.0);
    }
}

TEST_CASE("reverse-mode matches finite differences: classification") {
    const ModelSnapshot snap = toy_model(2, 2, 8, 203);
    const TokenSequence seq = make_seq({1, 7, 3, 9});
    const ScalarTarget target = ScalarTarget::class_logit(2);
    const GradientField exact = input_gradients(snap, seq, target);
    const GradientField approx = finite_difference_gradients(snap, seq, target, 1e-5);
    CHECK(max_rel_err(exact.grads, approx.grads) < 1e-4);
}

TEST_CASE("reverse-mode matches finite differences: regression") {
    const ModelSnapshot snap = toy_model(1, 2, 8, 204);
    const TokenSequence seq = make_seq({5, 2, 11});
    const GradientField exact = input_gradients(snap, seq, ScalarTarget::regression());
    const GradientField approx =
        finite_difference_gradients(snap, seq, ScalarTarget::regression(), 1e-5);
    CHECK(max_rel_err(exact.grads, approx.grads) < 1e-4);
}

TEST_CASE("reverse-mode matches finite differences: lm") {
    const ModelSnapshot snap = toy_model(1, 1, 8, 205);
    TokenSequence seq = make_seq({4, 1, 6, 8});
    seq.special_positions = {0, 1};
    const ScalarTarget target = ScalarTarget::vocab_logit(1, 9);
    const GradientField exact = input_gradients(snap, seq, target);
    const GradientField approx = finite_difference_gradients(snap, seq, target, 1e-5);
    CHECK(max_rel_err(exact.grads, approx.grads) < 1e-4);
}

TEST_CASE("central differences converge at second order") {
    // Probe one coordinate of a smooth non-polynomial scalar. Halving h must
    // shrink the error by about 4x.
    const ModelSnapshot snap = toy_model(1, 1, 4, 206);
    const TokenSequence seq = make_seq({1, 2});
    const ScalarTarget target = ScalarTarget::class_logit(0);
    const GradientField exact = input_gradients(snap, seq, target);

    std::array<double, 2> err{};
    std::array<double, 2> hs = {1e-2, 5e-3};
    for (int t = 0; t < 2; ++t) {
        const GradientField approx = finite_difference_gradients(snap, seq, target, hs[t]);
        double worst = 0.0;
        for (std::size_t i = 0; i < approx.grads.data.size(); ++i) {
            worst = std::max(worst, std::fabs(approx.grads.data[i] - exact.grads.data[i]));
        }
        err[t] = worst;
    }
    CHECK(err[1] < err[0]);
    CHECK(err[1] / err[0] == doctest::Approx(0.25).epsilon(0.3));
}

TEST_CASE("weighted gradients are linear in the targets") {
    const ModelSnapshot snap = toy_model(1, 2, 8, 207);
    const TokenSequence seq = make_seq({3, 6, 2});
    const ScalarTarget a = ScalarTarget::class_logit(0);
    const ScalarTarget b = ScalarTarget::class_logit(2);
    const GradientField ga = input_gradients(snap, seq, a);
    const GradientField gb = input_gradients(snap, seq, b);

    const std::vector<std::pair<ScalarTarget, double>> targets = {{a, 2.0}, {b, -0.5}};
    const GradientField combo = input_gradients_weighted(snap, seq, targets);
    for (std::size_t i = 0; i < combo.grads.data.size(); ++i) {
        const double expect = 2.0 * ga.grads.data[i] - 0.5 * gb.grads.data[i];
        CHECK(combo.grads.data[i] == doctest::Approx(expect).epsilon(1e-10));
    }
}

TEST_CASE("baseline construction") {
    const ModelSnapshot snap = toy_model(1, 1, 4, 208);
    const TokenSequence seq = make_seq({1, 2, 3});

    const Matrix keep_pos = make_baseline(snap, seq, {BaselineSpec::Kind::zero_token_keep_pos});
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 4; ++j) {
            CHECK(keep_pos.at(i, j) == snap.position_embeddings.at(i, j));
        }
    }

    const Matrix zeros = make_baseline(snap, seq, {BaselineSpec::Kind::all_zero});
    for (double x : zeros.data) CHECK(x == 0.0);
}

TEST_CASE("integrated gradients vanish when input equals baseline") {
    ModelSnapshot snap = toy_model(1, 1, 4, 209);
    const TokenSequence seq = make_seq({1, 2});
    // With a zero position table, zero-token-keep-pos baseline coincides with
    // the path endpoint scaling, so x0 - baseline multiplies every term.
    for (double& x : snap.token_embeddings.data) x = 0.0;
    for (double& x : snap.position_embeddings.data) x = 0.0;
    const Matrix attr = integrated_gradients_raw(snap, seq, ScalarTarget::class_logit(0), 8,
                                                 {BaselineSpec::Kind::all_zero});
    for (double x : attr.data) CHECK(x == 0.0);
}

TEST_CASE("integrated gradients of a linear model equal gradient times input") {
    // Zero layers: the logit is linear in x0, so IG from a zero baseline is
    // exactly grad * input for any number of steps.
    const ModelSnapshot snap = toy_model(0, 1, 4, 210);
    const TokenSequence seq = make_seq({2, 7});
    const ScalarTarget target = ScalarTarget::class_logit(1);
    const Matrix x0 = embed(snap, seq);
    const GradientField grad = input_gradients(snap, seq, target);
    const Matrix attr =
        integrated_gradients_raw(snap, seq, target, 3, {BaselineSpec::Kind::all_zero});
    for (std::size_t i = 0; i < attr.data.size(); ++i) {
        CHECK(attr.data[i] == doctest::Approx(grad.grads.data[i] * x0.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("integrated gradients satisfy completeness") {
    const ModelSnapshot snap = toy_model(1, 2, 8, 211);
    const TokenSequence seq = make_seq({1, 4, 6});
    const ScalarTarget target = ScalarTarget::class_logit(0);
    const BaselineSpec baseline{BaselineSpec::Kind::zero_token_keep_pos};

    const Matrix base = make_baseline(snap, seq, baseline);
    const double f_input = scalar_output(snap, seq, target);
    const double f_base = scalar_output_at(snap, base, target);

    for (int steps : {64, 256}) {
        const Matrix attr = integrated_gradients_raw(snap, seq, target, steps, baseline);
        double total = 0.0;
        for (double x : attr.data) total += x;
        const double gap = std::fabs(total - (f_input - f_base));
        // Midpoint rule: the residual shrinks with the step count.
        CHECK(gap < (steps == 64 ? 5e-4 : 5e-5));
    }
}

TEST_CASE("parameter traversal order matches the lifted snapshot") {
    ModelSnapshot snap = toy_model(1, 2, 8, 212);
    std::vector<double> flat;
    for_each_param(snap, [&](double& x) { flat.push_back(x); });

    Tape tape;
    std::vector<int> indices;
    const SnapshotT<Ad> lifted = lift_snapshot(tape, snap, &indices);
    REQUIRE(indices.size() == flat.size());
    // Same order: the tape value at each recorded index equals the flat walk.
    for (std::size_t i = 0; i < flat.size(); ++i) {
        CHECK(tape.value(indices[i]) == flat[i]);
    }
    CHECK(lifted.config.d_model == snap.config.d_model);
}

TEST_CASE("gradients are deterministic") {
    const ModelSnapshot snap = toy_model(2, 2, 8, 213);
    const TokenSequence seq = make_seq({9, 3, 5});
    const ScalarTarget target = ScalarTarget::class_logit(1);
    const GradientField a = input_gradients(snap, seq, target);
    const GradientField b = input_gradients(snap, seq, target);
    CHECK(a.grads.data == b.grads.data);
}
