#include "nxl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace nxl {

using json = nlohmann::json;

void LabeledDataset::validate(const ModelConfig& cfg) const {
    if (instances.empty()) throw LoadError("dataset: empty");
    for (const Instance& inst : instances) {
        inst.sequence.validate(cfg);
        if (inst.evidence &&
            inst.evidence->bits.size() != static_cast<std::size_t>(inst.sequence.length())) {
            throw LoadError("dataset: evidence length disagrees with sequence (" + inst.id + ")");
        }
        if (task == TaskKind::classification &&
            (inst.gold_label < 0 || inst.gold_label >= cfg.n_classes)) {
            throw LoadError("dataset: gold label out of range (" + inst.id + ")");
        }
    }
}

LabeledDataset load_dataset(const std::string& path, TaskKind task) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open dataset: " + path);
    LabeledDataset ds;
    ds.task = task;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw LoadError("dataset line " + std::to_string(lineno) + ": " + e.what());
        }
        try {
            Instance inst;
            inst.id = j.at("id").is_string() ? j.at("id").get<std::string>()
                                             : std::to_string(j.at("id").get<long long>());
            inst.sequence.token_ids = j.at("tokens").get<std::vector<int>>();
            inst.sequence.special_positions.clear();
            for (int p : j.at("special").get<std::vector<int>>()) {
                inst.sequence.special_positions.insert(p);
            }
            switch (task) {
                case TaskKind::classification:
                case TaskKind::masked_lm:
                    inst.gold_label = j.at("gold").get<int>();
                    break;
                case TaskKind::regression:
                    inst.gold_score = j.at("gold").get<double>();
                    break;
            }
            if (j.contains("evidence")) {
                inst.evidence = EvidenceVector{j.at("evidence").get<std::vector<int>>()};
            }
            if (j.contains("target_token")) inst.target_token = j.at("target_token").get<int>();
            if (j.contains("foil_token")) inst.foil_token = j.at("foil_token").get<int>();
            ds.instances.push_back(std::move(inst));
        } catch (const json::exception& e) {
            throw LoadError("dataset line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (ds.instances.empty()) throw LoadError("dataset: empty file " + path);
    return ds;
}

void save_dataset(const LabeledDataset& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot open for writing: " + path);
    for (const Instance& inst : dataset.instances) {
        json j;
        j["id"] = inst.id;
        j["tokens"] = inst.sequence.token_ids;
        j["special"] =
            std::vector<int>(inst.sequence.special_positions.begin(),
                             inst.sequence.special_positions.end());
        if (dataset.task == TaskKind::regression) {
            j["gold"] = inst.gold_score;
        } else {
            j["gold"] = inst.gold_label;
        }
        if (inst.evidence) j["evidence"] = inst.evidence->bits;
        if (inst.target_token) j["target_token"] = *inst.target_token;
        if (inst.foil_token) j["foil_token"] = *inst.foil_token;
        out << j.dump() << "\n";
    }
}

void PerturbationSpec::validate(const ModelConfig& cfg) const {
    if (ratios.empty()) throw ProtocolError("perturbation: ratio list is empty");
    double prev = 0.0;
    for (double r : ratios) {
        if (r <= prev || r > 100.0) {
            throw ProtocolError("perturbation: ratios must be strictly increasing in (0,100]");
        }
        prev = r;
    }
    if (mode == Mode::mask && (mask_token_id < 0 || mask_token_id >= cfg.vocab_size)) {
        throw ProtocolError("perturbation: mask token id out of vocabulary");
    }
}

PerturbOutcome perturb(const TokenSequence& seq, const std::vector<int>& ranking, double ratio,
                       const PerturbationSpec& spec) {
    if (ratio <= 0.0 || ratio > 100.0) throw ProtocolError("perturbation ratio outside (0,100]");
    if (ranking.empty()) throw ProtocolError("perturb: empty ranking");
    const int k = static_cast<int>(
        std::ceil(ratio / 100.0 * static_cast<double>(ranking.size())));
    std::vector<bool> hit(seq.length(), false);
    for (int i = 0; i < k && i < static_cast<int>(ranking.size()); ++i) hit[ranking[i]] = true;

    PerturbOutcome out;
    if (spec.mode == PerturbationSpec::Mode::mask) {
        out.sequence = seq;
        for (int p = 0; p < seq.length(); ++p) {
            if (hit[p]) out.sequence.token_ids[p] = spec.mask_token_id;
        }
        return out;
    }

    // Delete mode: survivors keep their relative order, special positions are
    // always retained.
    TokenSequence survivor;
    survivor.special_positions.clear();
    bool any_regular = false;
    for (int p = 0; p < seq.length(); ++p) {
        const bool special = seq.special_positions.contains(p);
        if (!special && hit[p]) continue;
        const int new_pos = survivor.length();
        survivor.token_ids.push_back(seq.token_ids[p]);
        if (special) {
            survivor.special_positions.insert(new_pos);
        } else {
            any_regular = true;
        }
    }
    out.sequence = std::move(survivor);
    out.degenerate = !any_regular;
    return out;
}

namespace {

double probability_of_label(const ModelSnapshot& snap, const TokenSequence& seq, TaskKind task,
                            int label) {
    const Prediction pred = predict(snap, seq, task);
    return pred.probabilities[label];
}

struct PerInstanceRanking {
    int predicted = -1;
    double prob = 0.0;
    std::vector<int> ranking;
};

PerInstanceRanking rank_instance(const ModelSnapshot& snap, const Instance& inst, TaskKind task,
                                 const AttributionRequest& request) {
    PerInstanceRanking out;
    const Prediction pred = predict(snap, inst.sequence, task);
    if (task != TaskKind::regression) {
        out.predicted = pred.label;
        out.prob = pred.probabilities[pred.label];
    }
    AttributionRequest req = request;
    req.task = task;
    const AttributionResult result = attribute(snap, inst.sequence, req);
    out.ranking = rank_tokens(result, eligible_positions(inst.sequence));
    return out;
}

} // namespace

FaithfulnessReport aopc(const ModelSnapshot& snap, const LabeledDataset& dataset,
                        const AttributionRequest& request, const PerturbationSpec& spec) {
    if (dataset.task == TaskKind::regression) {
        throw ProtocolError("AOPC is defined for classification and masked LM tasks");
    }
    dataset.validate(snap.config);
    spec.validate(snap.config);

    FaithfulnessReport report;
    report.metric = "aopc";
    report.method = method_name(request.method);
    report.ratios = spec.ratios;
    report.values.assign(spec.ratios.size(), 0.0);
    report.skipped.assign(spec.ratios.size(), 0);
    std::vector<int> counts(spec.ratios.size(), 0);

    for (const Instance& inst : dataset.instances) {
        const PerInstanceRanking pr = rank_instance(snap, inst, dataset.task, request);
        for (std::size_t ri = 0; ri < spec.ratios.size(); ++ri) {
            const PerturbOutcome outcome = perturb(inst.sequence, pr.ranking, spec.ratios[ri], spec);
            if (outcome.degenerate) {
                ++report.skipped[ri];
                continue;
            }
            const double p_pert =
                probability_of_label(snap, outcome.sequence, dataset.task, pr.predicted);
            report.values[ri] += pr.prob - p_pert;
            ++counts[ri];
        }
    }
    double mean = 0.0;
    for (std::size_t ri = 0; ri < spec.ratios.size(); ++ri) {
        if (counts[ri] > 0) report.values[ri] /= counts[ri];
        mean += report.values[ri];
        report.skipped_total += report.skipped[ri];
    }
    report.mean = mean / static_cast<double>(spec.ratios.size());
    return report;
}

FaithfulnessReport accuracy_under_perturbation(const ModelSnapshot& snap,
                                               const LabeledDataset& dataset,
                                               const AttributionRequest& request,
                                               const PerturbationSpec& spec) {
    dataset.validate(snap.config);
    spec.validate(snap.config);

    FaithfulnessReport report;
    report.metric = "accuracy";
    report.method = method_name(request.method);
    report.ratios = spec.ratios;
    report.values.assign(spec.ratios.size(), 0.0);
    report.skipped.assign(spec.ratios.size(), 0);

    std::vector<PerInstanceRanking> rankings;
    rankings.reserve(dataset.instances.size());
    for (const Instance& inst : dataset.instances) {
        rankings.push_back(rank_instance(snap, inst, dataset.task, request));
    }

    for (std::size_t ri = 0; ri < spec.ratios.size(); ++ri) {
        if (dataset.task == TaskKind::regression) {
            Vector outputs;
            Vector gold;
            for (std::size_t ii = 0; ii < dataset.instances.size(); ++ii) {
                const Instance& inst = dataset.instances[ii];
                const PerturbOutcome outcome =
                    perturb(inst.sequence, rankings[ii].ranking, spec.ratios[ri], spec);
                if (outcome.degenerate) {
                    ++report.skipped[ri];
                    continue;
                }
                outputs.push_back(
                    predict(snap, outcome.sequence, TaskKind::regression).value);
                gold.push_back(inst.gold_score);
            }
            report.values[ri] = pearson(outputs, gold);
        } else {
            int correct = 0;
            int total = 0;
            for (std::size_t ii = 0; ii < dataset.instances.size(); ++ii) {
                const Instance& inst = dataset.instances[ii];
                const PerturbOutcome outcome =
                    perturb(inst.sequence, rankings[ii].ranking, spec.ratios[ri], spec);
                if (outcome.degenerate) {
                    ++report.skipped[ri];
                    continue;
                }
                const Prediction pred = predict(snap, outcome.sequence, dataset.task);
                const int gold = dataset.task == TaskKind::masked_lm
                                     ? inst.target_token.value_or(inst.gold_label)
                                     : inst.gold_label;
                if (pred.label == gold) ++correct;
                ++total;
            }
            report.values[ri] = total > 0 ? static_cast<double>(correct) / total : 0.0;
        }
        report.skipped_total += report.skipped[ri];
    }
    double mean = 0.0;
    for (double v : report.values) mean += v;
    report.mean = mean / static_cast<double>(report.values.size());
    return report;
}

double pearson(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw ShapeError("pearson: length mismatch");
    const std::size_t m = a.size();
    if (m < 2) throw NumericError("pearson: need at least two samples");
    double mean_a = 0.0, mean_b = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        mean_a += a[i];
        mean_b += b[i];
    }
    mean_a /= static_cast<double>(m);
    mean_b /= static_cast<double>(m);
    double cov = 0.0, var_a = 0.0, var_b = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double da = a[i] - mean_a;
        const double db = b[i] - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if (var_a == 0.0 || var_b == 0.0) {
        throw NumericError("pearson: zero variance, correlation undefined");
    }
    return cov / std::sqrt(var_a * var_b);
}

double dot_alignment(const EvidenceVector& evidence, const AttributionResult& result) {
    if (evidence.bits.size() != result.scores.size()) {
        throw ShapeError("dot_alignment: length mismatch");
    }
    double total = 0.0;
    for (double s : result.scores) total += std::fabs(s);
    double out = 0.0;
    for (std::size_t i = 0; i < evidence.bits.size(); ++i) {
        if (evidence.bits[i] == 0) continue;
        const double s = std::fabs(result.scores[i]);
        out += total > 0.0 ? s / total : s;
    }
    return out;
}

double average_precision(const EvidenceVector& evidence, const AttributionResult& result) {
    if (evidence.bits.size() != result.scores.size()) {
        throw ShapeError("average_precision: length mismatch");
    }
    int positives = 0;
    for (int b : evidence.bits) positives += b != 0;
    if (positives == 0) throw NumericError("average_precision: all-zero evidence is undefined");

    std::vector<int> order(result.scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
        if (result.scores[x] != result.scores[y]) return result.scores[x] > result.scores[y];
        return x < y;
    });
    double ap = 0.0;
    int recovered = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (evidence.bits[order[k]] != 0) {
            ++recovered;
            ap += static_cast<double>(recovered) / static_cast<double>(k + 1);
        }
    }
    return ap / positives;
}

namespace {

// Restrict scores and evidence bits to the given positions.
void filtered_metrics(const AttributionResult& result, const EvidenceVector& evidence,
                      const std::vector<int>& positions, double& dot_out, double& ap_out,
                      bool& usable) {
    AttributionResult sub;
    sub.signed_scores = result.signed_scores;
    EvidenceVector ev;
    for (int p : positions) {
        sub.scores.push_back(result.scores[p]);
        ev.bits.push_back(evidence.bits[p]);
    }
    int positives = 0;
    for (int b : ev.bits) positives += b != 0;
    if (positives == 0) {
        usable = false;
        return;
    }
    usable = true;
    dot_out = dot_alignment(ev, sub);
    ap_out = average_precision(ev, sub);
}

} // namespace

AlignmentReport per_layer_alignment(const ModelSnapshot& snap, const LabeledDataset& dataset,
                                    const std::vector<std::string>& variants,
                                    std::optional<int> arbitrary_token) {
    if (dataset.task != TaskKind::masked_lm) {
        throw ProtocolError("per-layer alignment runs on masked LM datasets");
    }
    dataset.validate(snap.config);
    const int L = snap.config.n_layers;

    struct Acc {
        double dot = 0.0;
        double ap = 0.0;
        int count = 0;
    };
    // (variant, layer) -> accumulator; layer 0 only for l2norm.
    std::map<std::pair<std::string, int>, Acc> acc;

    for (const Instance& inst : dataset.instances) {
        if (!inst.evidence) {
            throw ProtocolError("alignment instance without evidence: " + inst.id);
        }
        const ForwardTrace trace = encode(snap, inst.sequence);
        const std::vector<int> eligible = eligible_positions(inst.sequence);
        for (const std::string& variant : variants) {
            std::vector<int> layers;
            if (variant == "l2norm") {
                layers = {0};
            } else {
                for (int l = 1; l <= L; ++l) layers.push_back(l);
            }
            for (int layer : layers) {
                AttributionResult result;
                if (variant == "l2norm") {
                    result = attr_l2norm(trace);
                } else if (variant == "logat_target") {
                    if (!inst.target_token) throw ProtocolError("instance lacks target_token");
                    result = attr_logat_lm(snap, trace, *inst.target_token, layer);
                } else if (variant == "logat_foil") {
                    if (!inst.foil_token) throw ProtocolError("instance lacks foil_token");
                    result = attr_logat_lm(snap, trace, *inst.foil_token, layer);
                } else if (variant == "logat_arbitrary") {
                    if (!arbitrary_token) {
                        throw ProtocolError("logat_arbitrary needs an explicit token id");
                    }
                    result = attr_logat_lm(snap, trace, *arbitrary_token, layer);
                } else if (variant == "normxlogit") {
                    if (!inst.target_token) throw ProtocolError("instance lacks target_token");
                    AttributionRequest req;
                    req.method = AttributionMethod::normxlogit;
                    req.task = TaskKind::masked_lm;
                    req.target_label = *inst.target_token;
                    req.layer = layer;
                    result = attr_normxlogit(snap, trace, req);
                } else {
                    throw ProtocolError("unknown alignment variant: " + variant);
                }
                double dot = 0.0, ap = 0.0;
                bool usable = false;
                filtered_metrics(result, *inst.evidence, eligible, dot, ap, usable);
                if (!usable) continue;
                Acc& a = acc[{variant, layer}];
                a.dot += dot;
                a.ap += ap;
                ++a.count;
            }
        }
    }

    AlignmentReport report;
    for (const std::string& variant : variants) {
        std::vector<int> layers;
        if (variant == "l2norm") {
            layers = {0};
        } else {
            for (int l = 1; l <= L; ++l) layers.push_back(l);
        }
        for (int layer : layers) {
            const Acc& a = acc[{variant, layer}];
            AlignmentRow row;
            row.variant = variant;
            row.layer = layer;
            if (a.count > 0) {
                row.mean_dot = a.dot / a.count;
                row.mean_ap = a.ap / a.count;
            }
            report.rows.push_back(row);
        }
    }
    return report;
}

} // namespace nxl
