#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "nxl/evaluation.hpp"
#include "test_util.hpp"

using namespace nxl;
using nxl_test::make_seq;
using nxl_test::toy_model;

namespace {

// Rank-counting oracle for average precision, structured differently from the
// sort-based implementation: the rank of index i is one plus the number of
// indices that beat it (higher score, or equal score with lower index).
double ap_oracle(const std::vector<int>& bits, const Vector& scores) {
    const int n = static_cast<int>(scores.size());
    double ap = 0.0;
    int positives = 0;
    for (int i = 0; i < n; ++i) {
        if (bits[i] == 0) continue;
        ++positives;
        int rank = 1;
        int positives_at_or_above = 0;
        for (int j = 0; j < n; ++j) {
            const bool beats = scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
            if (j != i && beats) ++rank;
            if (bits[j] != 0 && (j == i || beats)) ++positives_at_or_above;
        }
        ap += static_cast<double>(positives_at_or_above) / rank;
    }
    return ap / positives;
}

AttributionResult scores_result(Vector scores) {
    AttributionResult res;
    res.scores = std::move(scores);
    return res;
}

Instance make_instance(std::string id, std::vector<int> tokens, std::set<int> specials,
                       int gold) {
    Instance inst;
    inst.id = std::move(id);
    inst.sequence.token_ids = std::move(tokens);
    inst.sequence.special_positions = std::move(specials);
    inst.gold_label = gold;
    return inst;
}

} // namespace

TEST_CASE("perturb masks the top-ranked fraction") {
    const TokenSequence seq = make_seq({9, 5, 6, 7}); // position 0 special
    const std::vector<int> ranking = {2, 1, 3};
    PerturbationSpec spec;
    spec.mask_token_id = 1;

    // 34% of 3 eligible tokens -> ceil(1.02) = 2 positions masked.
    const PerturbOutcome out = perturb(seq, ranking, 34.0, spec);
    CHECK(out.sequence.token_ids == std::vector<int>{9, 1, 1, 7});
    CHECK_FALSE(out.degenerate);

    // The smallest positive ratio still hits at least one token.
    const PerturbOutcome one = perturb(seq, ranking, 1.0, spec);
    CHECK(one.sequence.token_ids == std::vector<int>{9, 5, 1, 7});

    const PerturbOutcome all = perturb(seq, ranking, 100.0, spec);
    CHECK(all.sequence.token_ids == std::vector<int>{9, 1, 1, 1});
    CHECK_FALSE(all.degenerate);

    CHECK_THROWS_AS(perturb(seq, ranking, 0.0, spec), ProtocolError);
    CHECK_THROWS_AS(perturb(seq, ranking, 101.0, spec), ProtocolError);
    CHECK_THROWS_AS(perturb(seq, {}, 50.0, spec), ProtocolError);
}

TEST_CASE("perturb delete keeps specials and survivor order") {
    TokenSequence seq = make_seq({9, 5, 6, 7, 8});
    seq.special_positions = {0, 3};
    PerturbationSpec spec;
    spec.mode = PerturbationSpec::Mode::del;

    // Rank the eligible positions {1, 2, 4}; drop the top one.
    const PerturbOutcome out = perturb(seq, {2, 4, 1}, 33.0, spec);
    CHECK(out.sequence.token_ids == std::vector<int>{9, 5, 7, 8});
    CHECK(out.sequence.special_positions == std::set<int>{0, 2});
    CHECK_FALSE(out.degenerate);

    // Deleting everything eligible leaves only specials: degenerate.
    const PerturbOutcome gone = perturb(seq, {2, 4, 1}, 100.0, spec);
    CHECK(gone.sequence.token_ids == std::vector<int>{9, 7});
    CHECK(gone.sequence.special_positions == std::set<int>{0, 1});
    CHECK(gone.degenerate);
}

TEST_CASE("perturbation spec validation") {
    const ModelConfig cfg = nxl_test::make_config(1, 1, 4, 8, 16, 12, 3);
    PerturbationSpec spec;
    spec.validate(cfg);

    PerturbationSpec bad = spec;
    bad.ratios = {20, 10};
    CHECK_THROWS_AS(bad.validate(cfg), ProtocolError);
    bad.ratios = {};
    CHECK_THROWS_AS(bad.validate(cfg), ProtocolError);
    bad.ratios = {50, 150};
    CHECK_THROWS_AS(bad.validate(cfg), ProtocolError);
    bad = spec;
    bad.mask_token_id = 99;
    CHECK_THROWS_AS(bad.validate(cfg), ProtocolError);
}

TEST_CASE("dot alignment known values") {
    const AttributionResult res = scores_result({0.3, 0.1, 0.5, 0.1});
    CHECK(dot_alignment({{1, 0, 0, 0}}, res) == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(dot_alignment({{1, 1, 1, 1}}, res) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(dot_alignment({{0, 0, 0, 0}}, res) == 0.0);

    // Signs are ignored: attribution mass is absolute.
    const AttributionResult neg = scores_result({-0.3, 0.1, -0.5, 0.1});
    CHECK(dot_alignment({{1, 0, 0, 0}}, neg) == doctest::Approx(0.3).epsilon(1e-12));

    CHECK_THROWS_AS(dot_alignment({{1, 0}}, res), ShapeError);
}

TEST_CASE("dot alignment matches a naive oracle") {
    Rng rng(400);
    for (int it = 0; it < 200; ++it) {
        const int n = 1 + static_cast<int>(rng.below(10));
        Vector scores(n);
        for (double& s : scores) s = rng.normal(0.0, 1.0);
        std::vector<int> bits(n);
        for (int& b : bits) b = static_cast<int>(rng.below(2));

        double total = 0.0;
        for (double s : scores) total += std::fabs(s);
        double expect = 0.0;
        for (int i = 0; i < n; ++i) {
            if (bits[i]) expect += std::fabs(scores[i]) / total;
        }
        CHECK(dot_alignment({bits}, scores_result(scores)) ==
              doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("average precision known values") {
    const AttributionResult res = scores_result({0.3, 0.1, 0.5, 0.1});
    // The positive sits at rank 2 of the ranking [2, 0, 1, 3].
    CHECK(average_precision({{1, 0, 0, 0}}, res) == doctest::Approx(0.5).epsilon(1e-12));
    // Top-ranked evidence token: perfect score.
    CHECK(average_precision({{0, 0, 1, 0}}, res) == doctest::Approx(1.0).epsilon(1e-12));
    // Tied 0.1 scores break toward the lower index, putting position 1 third.
    CHECK(average_precision({{0, 1, 0, 0}}, res) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    CHECK_THROWS_AS(average_precision({{0, 0, 0, 0}}, res), NumericError);
    CHECK_THROWS_AS(average_precision({{1, 0}}, res), ShapeError);
}

TEST_CASE("average precision matches the rank-counting oracle (fuzz)") {
    Rng rng(401);
    int checked = 0;
    while (checked < 1000) {
        const int n = 1 + static_cast<int>(rng.below(12));
        Vector scores(n);
        // Quantized scores force ties.
        for (double& s : scores) s = static_cast<double>(rng.below(5)) / 5.0;
        std::vector<int> bits(n);
        int positives = 0;
        for (int& b : bits) positives += (b = static_cast<int>(rng.below(2)));
        if (positives == 0) continue;
        ++checked;
        CHECK(average_precision({bits}, scores_result(scores)) ==
              doctest::Approx(ap_oracle(bits, scores)).epsilon(1e-12));
    }
}

TEST_CASE("average precision is invariant under increasing transforms") {
    Rng rng(402);
    for (int it = 0; it < 100; ++it) {
        const int n = 2 + static_cast<int>(rng.below(8));
        Vector scores(n);
        for (double& s : scores) s = rng.normal(0.0, 2.0);
        std::vector<int> bits(n, 0);
        bits[rng.below(static_cast<std::uint64_t>(n))] = 1;

        Vector warped = scores;
        for (double& s : warped) s = std::exp(0.5 * s) + 3.0;
        CHECK(average_precision({bits}, scores_result(scores)) ==
              average_precision({bits}, scores_result(warped)));
    }
}

TEST_CASE("pearson correlation") {
    CHECK(pearson({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pearson({1, 2, 3}, {6, 4, 2}) == doctest::Approx(-1.0).epsilon(1e-12));

    // Covariance oracle.
    const Vector a = {0.5, -1.0, 2.0, 0.25};
    const Vector b = {1.0, 0.0, -0.5, 3.0};
    double ma = 0, mb = 0;
    for (int i = 0; i < 4; ++i) {
        ma += a[i] / 4;
        mb += b[i] / 4;
    }
    double cov = 0, va = 0, vb = 0;
    for (int i = 0; i < 4; ++i) {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    CHECK(pearson(a, b) == doctest::Approx(cov / std::sqrt(va * vb)).epsilon(1e-12));

    CHECK_THROWS_AS(pearson({1.0}, {2.0}), NumericError);
    CHECK_THROWS_AS(pearson({1, 1, 1}, {1, 2, 3}), NumericError);
    CHECK_THROWS_AS(pearson({1, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("dataset save/load round trip") {
    namespace fs = std::filesystem;
    LabeledDataset ds;
    ds.task = TaskKind::masked_lm;
    Instance inst = make_instance("a", {0, 1, 5, 7}, {0, 1}, 4);
    inst.evidence = EvidenceVector{{0, 0, 1, 0}};
    inst.target_token = 4;
    inst.foil_token = 5;
    ds.instances.push_back(inst);
    ds.instances.push_back(make_instance("b", {0, 1, 9, 9}, {0, 1}, 5));

    const fs::path dir = fs::temp_directory_path() / "nxl_eval_test";
    fs::create_directories(dir);
    const std::string path = (dir / "ds.jsonl").string();
    save_dataset(ds, path);
    const LabeledDataset loaded = load_dataset(path, TaskKind::masked_lm);
    REQUIRE(loaded.instances.size() == 2);
    CHECK(loaded.instances[0].sequence.token_ids == inst.sequence.token_ids);
    CHECK(loaded.instances[0].sequence.special_positions == inst.sequence.special_positions);
    CHECK(loaded.instances[0].evidence->bits == inst.evidence->bits);
    CHECK(loaded.instances[0].target_token == 4);
    CHECK(loaded.instances[0].foil_token == 5);
    CHECK(loaded.instances[1].gold_label == 5);
    CHECK_FALSE(loaded.instances[1].evidence.has_value());

    CHECK_THROWS_AS(load_dataset((dir / "missing.jsonl").string(), TaskKind::classification),
                    LoadError);
}

TEST_CASE("dataset validation") {
    const ModelConfig cfg = nxl_test::make_config(1, 1, 4, 8, 16, 12, 3);
    LabeledDataset ds;
    ds.task = TaskKind::classification;
    CHECK_THROWS_AS(ds.validate(cfg), LoadError);

    ds.instances.push_back(make_instance("a", {0, 1, 2}, {0}, 1));
    ds.validate(cfg);

    LabeledDataset bad_gold = ds;
    bad_gold.instances[0].gold_label = 7;
    CHECK_THROWS_AS(bad_gold.validate(cfg), LoadError);

    LabeledDataset bad_ev = ds;
    bad_ev.instances[0].evidence = EvidenceVector{{1, 0}};
    CHECK_THROWS_AS(bad_ev.validate(cfg), LoadError);
}

TEST_CASE("aopc is zero when masking replaces tokens with themselves") {
    const ModelSnapshot snap = toy_model(1, 1, 8, 403);
    LabeledDataset ds;
    ds.task = TaskKind::classification;
    // Every eligible token already equals the mask id, so perturbation is the
    // identity and every probability drop is exactly zero.
    ds.instances.push_back(make_instance("a", {0, 1, 1, 1}, {0}, 0));
    ds.instances.push_back(make_instance("b", {2, 1, 1}, {0}, 1));

    AttributionRequest req;
    req.method = AttributionMethod::normxlogit;
    PerturbationSpec spec;
    spec.mask_token_id = 1;
    const FaithfulnessReport report = aopc(snap, ds, req, spec);
    CHECK(report.ratios.size() == 10);
    for (double v : report.values) CHECK(std::fabs(v) < 1e-12);
    CHECK(std::fabs(report.mean) < 1e-12);
    CHECK(report.skipped_total == 0);
}

TEST_CASE("aopc single ratio equals two forward passes") {
    const ModelSnapshot snap = toy_model(1, 2, 8, 404);
    LabeledDataset ds;
    ds.task = TaskKind::classification;
    const Instance inst = make_instance("a", {3, 7, 11, 2}, {0}, 0);
    ds.instances.push_back(inst);

    AttributionRequest req;
    req.method = AttributionMethod::logat;
    PerturbationSpec spec;
    spec.ratios = {100};
    spec.mask_token_id = 1;
    const FaithfulnessReport report = aopc(snap, ds, req, spec);

    const Prediction orig = predict(snap, inst.sequence, TaskKind::classification);
    TokenSequence masked = inst.sequence;
    for (int p = 1; p < 4; ++p) masked.token_ids[p] = 1;
    const Prediction pert = predict(snap, masked, TaskKind::classification);
    const double expect = orig.probabilities[orig.label] - pert.probabilities[orig.label];
    REQUIRE(report.values.size() == 1);
    CHECK(report.values[0] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(report.mean == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("aopc rejects regression datasets") {
    const ModelSnapshot snap = toy_model(1, 1, 8, 405);
    LabeledDataset ds;
    ds.task = TaskKind::regression;
    ds.instances.push_back(make_instance("a", {1, 2, 3}, {0}, 0));
    CHECK_THROWS_AS(aopc(snap, ds, AttributionRequest{}, PerturbationSpec{}), ProtocolError);
}

TEST_CASE("aopc counts degenerate deletions") {
    const ModelSnapshot snap = toy_model(1, 1, 8, 406);
    LabeledDataset ds;
    ds.task = TaskKind::classification;
    ds.instances.push_back(make_instance("a", {3, 7}, {0}, 0));

    AttributionRequest req;
    req.method = AttributionMethod::l2norm;
    PerturbationSpec spec;
    spec.mode = PerturbationSpec::Mode::del;
    spec.ratios = {50, 100};
    const FaithfulnessReport report = aopc(snap, ds, req, spec);
    // One eligible token: both ratios delete it, leaving only the special.
    CHECK(report.skipped == std::vector<int>{1, 1});
    CHECK(report.skipped_total == 2);
    CHECK(report.values[0] == 0.0);
}

TEST_CASE("accuracy under perturbation matches manual classification counts") {
    const ModelSnapshot snap = toy_model(1, 1, 8, 407);
    LabeledDataset ds;
    ds.task = TaskKind::classification;
    const std::vector<std::vector<int>> seqs = {{2, 9, 4, 6}, {1, 8, 3}, {5, 2, 7, 10}};
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        Instance inst = make_instance(std::to_string(i), seqs[i], {0}, 0);
        // Gold label = unperturbed prediction so accuracy starts meaningful.
        inst.gold_label = predict(snap, inst.sequence, TaskKind::classification).label;
        ds.instances.push_back(inst);
    }

    AttributionRequest req;
    req.method = AttributionMethod::logat;
    PerturbationSpec spec;
    spec.ratios = {50};
    spec.mask_token_id = 1;
    const FaithfulnessReport report = accuracy_under_perturbation(snap, ds, req, spec);

    int correct = 0;
    for (const Instance& inst : ds.instances) {
        AttributionRequest r = req;
        r.task = TaskKind::classification;
        const AttributionResult attr_res = attribute(snap, inst.sequence, r);
        const std::vector<int> ranking = rank_tokens(attr_res, eligible_positions(inst.sequence));
        const PerturbOutcome out = perturb(inst.sequence, ranking, 50, spec);
        if (predict(snap, out.sequence, TaskKind::classification).label == inst.gold_label) {
            ++correct;
        }
    }
    CHECK(report.values[0] == doctest::Approx(correct / 3.0).epsilon(1e-15));
}

TEST_CASE("accuracy under perturbation uses pearson for regression") {
    const ModelSnapshot snap = toy_model(1, 1, 8, 408);
    LabeledDataset ds;
    ds.task = TaskKind::regression;
    Rng rng(409);
    for (int i = 0; i < 6; ++i) {
        Instance inst = make_instance(std::to_string(i), {static_cast<int>(rng.below(16)),
                                                          static_cast<int>(rng.below(16)),
                                                          static_cast<int>(rng.below(16))},
                                      {0}, 0);
        inst.gold_score = rng.normal(0.0, 1.0);
        ds.instances.push_back(inst);
    }
    AttributionRequest req;
    req.method = AttributionMethod::l2norm;
    PerturbationSpec spec;
    spec.ratios = {50};
    spec.mask_token_id = 1;
    const FaithfulnessReport report = accuracy_under_perturbation(snap, ds, req, spec);
    CHECK(report.values[0] >= -1.0);
    CHECK(report.values[0] <= 1.0);
}

TEST_CASE("per-layer alignment report shape and layer-0 row") {
    const ModelSnapshot snap = toy_model(2, 1, 8, 410);
    LabeledDataset ds;
    ds.task = TaskKind::masked_lm;
    Instance inst = make_instance("a", {0, 1, 5, 7, 9}, {0, 1}, 4);
    inst.evidence = EvidenceVector{{0, 0, 1, 0, 0}};
    inst.target_token = 4;
    inst.foil_token = 5;
    ds.instances.push_back(inst);

    const AlignmentReport report = per_layer_alignment(
        snap, ds, {"l2norm", "logat_target", "logat_foil", "normxlogit"}, std::nullopt);
    // l2norm contributes a single layer-0 row, everything else one row per
    // encoder layer.
    REQUIRE(report.rows.size() == 1 + 3 * 2);
    CHECK(report.rows[0].variant == "l2norm");
    CHECK(report.rows[0].layer == 0);
    CHECK(report.rows[1].variant == "logat_target");
    CHECK(report.rows[1].layer == 1);
    CHECK(report.rows[2].layer == 2);
    for (const AlignmentRow& row : report.rows) {
        CHECK(row.mean_dot >= 0.0);
        CHECK(row.mean_dot <= 1.0 + 1e-12);
        CHECK(row.mean_ap >= 0.0);
        CHECK(row.mean_ap <= 1.0 + 1e-12);
    }
}

TEST_CASE("alignment with a single eligible evidence token is perfect") {
    const ModelSnapshot snap = toy_model(1, 1, 8, 411);
    LabeledDataset ds;
    ds.task = TaskKind::masked_lm;
    // Positions 0 (CLS) and 1 (MASK) are special; 2 is the only candidate.
    Instance inst = make_instance("a", {0, 1, 6}, {0, 1}, 4);
    inst.evidence = EvidenceVector{{0, 0, 1}};
    inst.target_token = 4;
    inst.foil_token = 5;
    ds.instances.push_back(inst);

    const AlignmentReport report =
        per_layer_alignment(snap, ds, {"l2norm", "logat_target", "normxlogit"}, std::nullopt);
    for (const AlignmentRow& row : report.rows) {
        CHECK(row.mean_ap == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(row.mean_dot == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("per-layer alignment consistency with direct kernels") {
    const ModelSnapshot snap = toy_model(1, 1, 8, 412);
    LabeledDataset ds;
    ds.task = TaskKind::masked_lm;
    Instance inst = make_instance("a", {0, 1, 5, 9, 3}, {0, 1}, 4);
    inst.evidence = EvidenceVector{{0, 0, 0, 1, 0}};
    inst.target_token = 4;
    inst.foil_token = 5;
    ds.instances.push_back(inst);

    const AlignmentReport report =
        per_layer_alignment(snap, ds, {"logat_target"}, std::nullopt);
    REQUIRE(report.rows.size() == 1);

    const ForwardTrace trace = encode(snap, inst.sequence);
    const AttributionResult logat = attr_logat_lm(snap, trace, 4, 1);
    AttributionResult sub;
    EvidenceVector ev;
    for (int p : eligible_positions(inst.sequence)) {
        sub.scores.push_back(logat.scores[p]);
        ev.bits.push_back(inst.evidence->bits[p]);
    }
    CHECK(report.rows[0].mean_dot == doctest::Approx(dot_alignment(ev, sub)).epsilon(1e-15));
    CHECK(report.rows[0].mean_ap ==
          doctest::Approx(average_precision(ev, sub)).epsilon(1e-15));
}

TEST_CASE("per-layer alignment errors") {
    const ModelSnapshot snap = toy_model(1, 1, 8, 413);
    LabeledDataset ds;
    ds.task = TaskKind::classification;
    ds.instances.push_back(make_instance("a", {0, 1, 2}, {0}, 0));
    CHECK_THROWS_AS(per_layer_alignment(snap, ds, {"l2norm"}, std::nullopt), ProtocolError);

    LabeledDataset lm;
    lm.task = TaskKind::masked_lm;
    Instance inst = make_instance("a", {0, 1, 2}, {0, 1}, 4);
    inst.evidence = EvidenceVector{{0, 0, 1}};
    inst.target_token = 4;
    lm.instances.push_back(inst);
    CHECK_THROWS_AS(per_layer_alignment(snap, lm, {"nope"}, std::nullopt), ProtocolError);
    CHECK_THROWS_AS(per_layer_alignment(snap, lm, {"logat_arbitrary"}, std::nullopt),
                    ProtocolError);
    CHECK_THROWS_AS(per_layer_alignment(snap, lm, {"logat_foil"}, std::nullopt), ProtocolError);
    // With an explicit token the arbitrary variant runs fine.
    const AlignmentReport ok = per_layer_alignment(snap, lm, {"logat_arbitrary"}, 7);
    CHECK(ok.rows.size() == 1);
}

TEST_CASE("faithfulness reports are deterministic") {
    const ModelSnapshot snap = toy_model(1, 1, 8, 414);
    LabeledDataset ds;
    ds.task = TaskKind::classification;
    ds.instances.push_back(make_instance("a", {2, 9, 4, 6}, {0}, 0));
    ds.instances.push_back(make_instance("b", {1, 8, 3}, {0}, 1));

    AttributionRequest req;
    req.method = AttributionMethod::random;
    req.seed = 7;
    PerturbationSpec spec;
    spec.mask_token_id = 1;
    const FaithfulnessReport a = aopc(snap, ds, req, spec);
    const FaithfulnessReport b = aopc(snap, ds, req, spec);
    CHECK(a.values == b.values);
    CHECK(a.mean == b.mean);
}
