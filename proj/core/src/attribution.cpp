#include "nxl/attribution.hpp"

#include <algorithm>
#include <cmath>

#include "nxl/rng.hpp"

namespace nxl {

std::string method_name(AttributionMethod m) {
    switch (m) {
        case AttributionMethod::l2norm: return "l2norm";
        case AttributionMethod::logat: return "logat";
        case AttributionMethod::normxlogit: return "normxlogit";
        case AttributionMethod::grad_norm: return "grad_norm";
        case AttributionMethod::grad_x_input: return "grad_x_input";
        case AttributionMethod::integrated_gradients: return "integrated_gradients";
        case AttributionMethod::random: return "random";
    }
    throw ProtocolError("unknown attribution method");
}

AttributionMethod method_from_name(const std::string& name) {
    if (name == "l2norm") return AttributionMethod::l2norm;
    if (name == "logat") return AttributionMethod::logat;
    if (name == "normxlogit") return AttributionMethod::normxlogit;
    if (name == "grad_norm") return AttributionMethod::grad_norm;
    if (name == "grad_x_input") return AttributionMethod::grad_x_input;
    if (name == "integrated_gradients" || name == "ig") {
        return AttributionMethod::integrated_gradients;
    }
    if (name == "random") return AttributionMethod::random;
    throw ProtocolError("unknown attribution method: " + name);
}

namespace {

int resolve_layer(const ModelSnapshot& snap, std::optional<int> layer) {
    const int L = snap.config.n_layers;
    const int l = layer.value_or(L);
    if (l < 0 || l > L) throw ProtocolError("layer index out of range");
    return l;
}

AttributionResult from_gradient_rows(const GradientField& field, const Matrix* multiplier,
                                     const std::string& name) {
    AttributionResult res;
    res.method = name;
    res.signed_scores = false;
    res.scores.resize(field.grads.rows);
    for (int i = 0; i < field.grads.rows; ++i) {
        Vector row = field.grads.row(i);
        if (multiplier) {
            for (int j = 0; j < field.grads.cols; ++j) row[j] *= multiplier->at(i, j);
        }
        res.scores[i] = l1_norm(row);
    }
    return res;
}

} // namespace

AttributionResult attr_l2norm(const ForwardTrace& trace) {
    AttributionResult res;
    res.method = "l2norm";
    res.signed_scores = false;
    res.layer = 0;
    res.scores.resize(trace.seq_len());
    for (int i = 0; i < trace.seq_len(); ++i) {
        res.scores[i] = l2_norm(trace.input_embeddings.row(i));
    }
    return res;
}

AttributionResult attr_logat_classification(const ModelSnapshot& snap, const ForwardTrace& trace,
                                            int class_index, int layer) {
    if (!snap.classification_head) throw MissingHeadError("LogAt needs a classification head");
    if (class_index < 0 || class_index >= snap.config.n_classes) {
        throw ProtocolError("LogAt class index out of range");
    }
    AttributionResult res;
    res.method = "logat";
    res.signed_scores = true;
    res.target_label = class_index;
    res.layer = layer;
    res.scores.resize(trace.seq_len());
    for (int i = 0; i < trace.seq_len(); ++i) {
        const Vector logits = apply_classification_head(snap, trace.representation(layer, i));
        res.scores[i] = logits[class_index];
    }
    return res;
}

AttributionResult attr_logat_regression(const ModelSnapshot& snap, const ForwardTrace& trace,
                                        int layer) {
    if (!snap.regression_head) throw MissingHeadError("LogAt needs a regression head");
    const int cls = snap.config.cls_position(trace.seq_len());
    const double prediction =
        apply_regression_head(snap, trace.final_layer().row(cls));
    AttributionResult res;
    res.method = "logat";
    res.signed_scores = false;
    res.layer = layer;
    res.scores.resize(trace.seq_len());
    for (int i = 0; i < trace.seq_len(); ++i) {
        const double out = apply_regression_head(snap, trace.representation(layer, i));
        res.scores[i] = std::fabs(out - prediction);
    }
    return res;
}

AttributionResult attr_logat_lm(const ModelSnapshot& snap, const ForwardTrace& trace,
                                int vocab_token, int layer) {
    if (!snap.lm_head) throw MissingHeadError("LogAt needs an LM head");
    if (vocab_token < 0 || vocab_token >= snap.config.vocab_size) {
        throw VocabError("LogAt vocab token out of range");
    }
    AttributionResult res;
    res.method = "logat";
    res.signed_scores = true;
    res.target_label = vocab_token;
    res.layer = layer;
    res.scores.resize(trace.seq_len());
    for (int i = 0; i < trace.seq_len(); ++i) {
        const Vector logits = apply_lm_head(snap, trace.representation(layer, i));
        res.scores[i] = logits[vocab_token];
    }
    return res;
}

AttributionResult attr_normxlogit(const ModelSnapshot& snap, const ForwardTrace& trace,
                                  const AttributionRequest& request) {
    const int layer = resolve_layer(snap, request.layer);
    AttributionResult logat;
    switch (request.task) {
        case TaskKind::classification:
            logat = attr_logat_classification(snap, trace, request.target_label.value_or(0), layer);
            break;
        case TaskKind::regression:
            logat = attr_logat_regression(snap, trace, layer);
            break;
        case TaskKind::masked_lm:
            logat = attr_logat_lm(snap, trace, request.target_label.value_or(0), layer);
            break;
    }
    const AttributionResult norms = attr_l2norm(trace);
    AttributionResult res = logat;
    res.method = "normxlogit";
    // The norm factor is always the layer-0 input embedding, whatever layer
    // LogAt reads.
    for (std::size_t i = 0; i < res.scores.size(); ++i) res.scores[i] *= norms.scores[i];
    return res;
}

AttributionResult attr_grad_norm(const ModelSnapshot& snap, const TokenSequence& seq,
                                 const ScalarTarget& target) {
    const GradientField field = input_gradients(snap, seq, target);
    return from_gradient_rows(field, nullptr, "grad_norm");
}

AttributionResult attr_grad_x_input(const ModelSnapshot& snap, const TokenSequence& seq,
                                    const ScalarTarget& target) {
    const GradientField field = input_gradients(snap, seq, target);
    const Matrix x0 = embed(snap, seq);
    return from_gradient_rows(field, &x0, "grad_x_input");
}

AttributionResult attr_integrated_gradients(const ModelSnapshot& snap, const TokenSequence& seq,
                                            const ScalarTarget& target, int steps,
                                            const BaselineSpec& baseline) {
    const Matrix raw = integrated_gradients_raw(snap, seq, target, steps, baseline);
    AttributionResult res;
    res.method = "integrated_gradients";
    res.signed_scores = false;
    res.scores.resize(raw.rows);
    for (int i = 0; i < raw.rows; ++i) res.scores[i] = l1_norm(raw.row(i));
    return res;
}

AttributionResult attr_random(const TokenSequence& seq, std::uint64_t seed) {
    const int n = seq.length();
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i + 1;
    Rng rng(seed);
    rng.shuffle(perm);
    AttributionResult res;
    res.method = "random";
    res.signed_scores = false;
    res.seed = seed;
    res.scores.resize(n);
    for (int i = 0; i < n; ++i) res.scores[i] = static_cast<double>(perm[i]) / n;
    return res;
}

std::vector<int> eligible_positions(const TokenSequence& seq) {
    std::vector<int> out;
    for (int i = 0; i < seq.length(); ++i) {
        if (!seq.special_positions.contains(i)) out.push_back(i);
    }
    return out;
}

std::vector<int> rank_tokens(const AttributionResult& result, const std::vector<int>& eligible,
                             bool abs_ranking) {
    if (eligible.empty()) throw ProtocolError("rank_tokens: empty eligible set");
    for (int p : eligible) {
        if (p < 0 || p >= static_cast<int>(result.scores.size())) {
            throw ProtocolError("rank_tokens: eligible position out of range");
        }
    }
    std::vector<int> order = eligible;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const double sa = abs_ranking ? std::fabs(result.scores[a]) : result.scores[a];
        const double sb = abs_ranking ? std::fabs(result.scores[b]) : result.scores[b];
        if (sa != sb) return sa > sb;
        return a < b;
    });
    return order;
}

AttributionResult attribute(const ModelSnapshot& snap, const TokenSequence& seq,
                            const AttributionRequest& request) {
    auto resolve_label = [&]() -> int {
        if (request.target_label) return *request.target_label;
        return predict(snap, seq, request.task).label;
    };
    auto make_target = [&]() -> ScalarTarget {
        switch (request.task) {
            case TaskKind::classification:
                return ScalarTarget::class_logit(resolve_label());
            case TaskKind::regression:
                return ScalarTarget::regression();
            case TaskKind::masked_lm: {
                const auto mask = seq.mask_position();
                if (!mask) throw ProtocolError("masked LM attribution needs a MASK position");
                return ScalarTarget::vocab_logit(*mask, resolve_label());
            }
        }
        throw ProtocolError("unreachable task kind");
    };

    switch (request.method) {
        case AttributionMethod::l2norm:
            return attr_l2norm(encode(snap, seq));
        case AttributionMethod::logat: {
            const ForwardTrace trace = encode(snap, seq);
            const int layer = resolve_layer(snap, request.layer);
            switch (request.task) {
                case TaskKind::classification:
                    return attr_logat_classification(snap, trace, resolve_label(), layer);
                case TaskKind::regression:
                    return attr_logat_regression(snap, trace, layer);
                case TaskKind::masked_lm:
                    return attr_logat_lm(snap, trace, resolve_label(), layer);
            }
            throw ProtocolError("unreachable task kind");
        }
        case AttributionMethod::normxlogit: {
            AttributionRequest resolved = request;
            if (!resolved.target_label && resolved.task != TaskKind::regression) {
                resolved.target_label = resolve_label();
            }
            return attr_normxlogit(snap, encode(snap, seq), resolved);
        }
        case AttributionMethod::grad_norm:
        case AttributionMethod::grad_x_input:
        case AttributionMethod::integrated_gradients: {
            const ScalarTarget target = make_target();
            AttributionResult res;
            if (request.method == AttributionMethod::grad_norm) {
                res = attr_grad_norm(snap, seq, target);
            } else if (request.method == AttributionMethod::grad_x_input) {
                res = attr_grad_x_input(snap, seq, target);
            } else {
                res = attr_integrated_gradients(snap, seq, target, request.ig_steps,
                                                request.ig_baseline);
            }
            if (target.kind == ScalarTarget::Kind::class_logit) {
                res.target_label = target.class_index;
            } else if (target.kind == ScalarTarget::Kind::vocab_logit) {
                res.target_label = target.token_id;
            }
            return res;
        }
        case AttributionMethod::random:
            return attr_random(seq, request.seed);
    }
    throw ProtocolError("unreachable attribution method");
}

} // namespace nxl
