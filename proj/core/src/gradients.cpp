#include "nxl/gradients.hpp"

#include <cmath>
#include <string>

namespace nxl {

namespace {

template <class S>
std::vector<S> lift_or_copy(Tape& tape, const Vector& v, std::vector<int>* params) {
    std::vector<S> out;
    out.reserve(v.size());
    for (double x : v) {
        Ad a = make_ad(tape, x);
        if (params) params->push_back(a.idx);
        out.push_back(a);
    }
    return out;
}

AdMatrix lift_matrix(Tape& tape, const Matrix& m, std::vector<int>* params) {
    AdMatrix out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        out.data[i] = make_ad(tape, m.data[i]);
        if (params) params->push_back(out.data[i].idx);
    }
    return out;
}

void validate_target(const ModelSnapshot& snap, int seq_len, const ScalarTarget& t) {
    switch (t.kind) {
        case ScalarTarget::Kind::class_logit:
            if (!snap.classification_head) throw MissingHeadError("target needs classification head");
            if (t.class_index < 0 || t.class_index >= snap.config.n_classes) {
                throw ProtocolError("target class index out of range");
            }
            break;
        case ScalarTarget::Kind::regression_output:
            if (!snap.regression_head) throw MissingHeadError("target needs regression head");
            break;
        case ScalarTarget::Kind::vocab_logit:
            if (!snap.lm_head) throw MissingHeadError("target needs LM head");
            if (t.token_id < 0 || t.token_id >= snap.config.vocab_size) {
                throw VocabError("target token id out of vocabulary");
            }
            if (t.position < 0 || t.position >= seq_len) {
                throw ProtocolError("target position out of range");
            }
            break;
    }
}

template <class S>
S target_scalar(const SnapshotT<S>& snap, const TraceT<S>& trace, const ScalarTarget& t) {
    const int n = trace.seq_len();
    const int cls = snap.config.cls_position(n);
    switch (t.kind) {
        case ScalarTarget::Kind::class_logit: {
            const auto& head = *snap.classification_head;
            std::vector<S> rep = trace.final_layer().row(cls);
            S acc = head.b[t.class_index];
            for (int j = 0; j < head.w.cols; ++j) acc = acc + head.w.at(t.class_index, j) * rep[j];
            return acc;
        }
        case ScalarTarget::Kind::regression_output: {
            const auto& head = *snap.regression_head;
            std::vector<S> rep = trace.final_layer().row(cls);
            S acc = head.b;
            for (std::size_t j = 0; j < head.w.size(); ++j) acc = acc + head.w[j] * rep[j];
            return acc;
        }
        case ScalarTarget::Kind::vocab_logit: {
            const auto& head = *snap.lm_head;
            std::vector<S> rep = trace.final_layer().row(t.position);
            S acc = head.b[t.token_id];
            for (int j = 0; j < head.w.cols; ++j) acc = acc + head.w.at(t.token_id, j) * rep[j];
            return acc;
        }
    }
    throw ProtocolError("unreachable target kind");
}

void check_trace_finite(const TraceT<Ad>& trace) {
    for (std::size_t l = 0; l < trace.layer_outputs.size(); ++l) {
        for (const Ad& x : trace.layer_outputs[l].data) {
            if (!std::isfinite(x.val)) {
                throw NumericError("non-finite value in encoder layer " + std::to_string(l + 1));
            }
        }
    }
}

GradientField backward_from(Tape& tape, const AdMatrix& ax0, const Ad& scalar,
                            const ScalarTarget& target) {
    if (!std::isfinite(scalar.val)) throw NumericError("non-finite target scalar");
    const std::vector<double> adj = tape.backward(scalar.idx);
    GradientField field;
    field.target = target;
    field.grads = Matrix(ax0.rows, ax0.cols);
    for (std::size_t k = 0; k < ax0.data.size(); ++k) {
        field.grads.data[k] = adj[ax0.data[k].idx];
    }
    if (!all_finite(field.grads)) throw NumericError("non-finite gradient entries");
    return field;
}

} // namespace

SnapshotT<Ad> lift_snapshot(Tape& tape, const ModelSnapshot& snap,
                            std::vector<int>* param_indices) {
    SnapshotT<Ad> out;
    out.config = snap.config;
    out.token_embeddings = lift_matrix(tape, snap.token_embeddings, param_indices);
    out.position_embeddings = lift_matrix(tape, snap.position_embeddings, param_indices);
    for (const auto& layer : snap.layers) {
        EncoderLayerT<Ad> al;
        for (const auto& h : layer.heads) {
            AttentionHeadT<Ad> ah;
            ah.wq = lift_matrix(tape, h.wq, param_indices);
            ah.bq = lift_or_copy<Ad>(tape, h.bq, param_indices);
            ah.wk = lift_matrix(tape, h.wk, param_indices);
            ah.bk = lift_or_copy<Ad>(tape, h.bk, param_indices);
            ah.wv = lift_matrix(tape, h.wv, param_indices);
            ah.bv = lift_or_copy<Ad>(tape, h.bv, param_indices);
            ah.wo = lift_matrix(tape, h.wo, param_indices);
            al.heads.push_back(std::move(ah));
        }
        al.bo = lift_or_copy<Ad>(tape, layer.bo, param_indices);
        al.ffn_w1 = lift_matrix(tape, layer.ffn_w1, param_indices);
        al.ffn_b1 = lift_or_copy<Ad>(tape, layer.ffn_b1, param_indices);
        al.ffn_w2 = lift_matrix(tape, layer.ffn_w2, param_indices);
        al.ffn_b2 = lift_or_copy<Ad>(tape, layer.ffn_b2, param_indices);
        al.ln1_gain = lift_or_copy<Ad>(tape, layer.ln1_gain, param_indices);
        al.ln1_bias = lift_or_copy<Ad>(tape, layer.ln1_bias, param_indices);
        al.ln2_gain = lift_or_copy<Ad>(tape, layer.ln2_gain, param_indices);
        al.ln2_bias = lift_or_copy<Ad>(tape, layer.ln2_bias, param_indices);
        out.layers.push_back(std::move(al));
    }
    if (snap.classification_head) {
        ClassificationHeadT<Ad> h;
        h.w = lift_matrix(tape, snap.classification_head->w, param_indices);
        h.b = lift_or_copy<Ad>(tape, snap.classification_head->b, param_indices);
        out.classification_head = std::move(h);
    }
    if (snap.regression_head) {
        RegressionHeadT<Ad> h;
        h.w = lift_or_copy<Ad>(tape, snap.regression_head->w, param_indices);
        h.b = make_ad(tape, snap.regression_head->b);
        if (param_indices) param_indices->push_back(h.b.idx);
        out.regression_head = std::move(h);
    }
    if (snap.lm_head) {
        LmHeadT<Ad> h;
        h.w = lift_matrix(tape, snap.lm_head->w, param_indices);
        h.b = lift_or_copy<Ad>(tape, snap.lm_head->b, param_indices);
        out.lm_head = std::move(h);
    }
    return out;
}

void for_each_param(ModelSnapshot& snap, const std::function<void(double&)>& fn) {
    auto mat = [&](Matrix& m) {
        for (double& x : m.data) fn(x);
    };
    auto vec = [&](Vector& v) {
        for (double& x : v) fn(x);
    };
    mat(snap.token_embeddings);
    mat(snap.position_embeddings);
    for (auto& layer : snap.layers) {
        for (auto& h : layer.heads) {
            mat(h.wq);
            vec(h.bq);
            mat(h.wk);
            vec(h.bk);
            mat(h.wv);
            vec(h.bv);
            mat(h.wo);
        }
        vec(layer.bo);
        mat(layer.ffn_w1);
        vec(layer.ffn_b1);
        mat(layer.ffn_w2);
        vec(layer.ffn_b2);
        vec(layer.ln1_gain);
        vec(layer.ln1_bias);
        vec(layer.ln2_gain);
        vec(layer.ln2_bias);
    }
    if (snap.classification_head) {
        mat(snap.classification_head->w);
        vec(snap.classification_head->b);
    }
    if (snap.regression_head) {
        vec(snap.regression_head->w);
        fn(snap.regression_head->b);
    }
    if (snap.lm_head) {
        mat(snap.lm_head->w);
        vec(snap.lm_head->b);
    }
}

double scalar_output_at(const ModelSnapshot& snap, const Matrix& x0, const ScalarTarget& target) {
    validate_target(snap, x0.rows, target);
    const ForwardTrace trace = encode_from_embeddings(snap, x0);
    return target_scalar(snap, trace, target);
}

double scalar_output(const ModelSnapshot& snap, const TokenSequence& seq,
                     const ScalarTarget& target) {
    return scalar_output_at(snap, embed(snap, seq), target);
}

GradientField input_gradients_at(const ModelSnapshot& snap, const Matrix& x0,
                                 const ScalarTarget& target) {
    validate_target(snap, x0.rows, target);
    Tape tape;
    const SnapshotT<Ad> asnap = lift_snapshot(tape, snap);
    const AdMatrix ax0 = lift(tape, x0);
    const TraceT<Ad> trace = encode_from_embeddings(asnap, ax0);
    check_trace_finite(trace);
    const Ad scalar = target_scalar(asnap, trace, target);
    return backward_from(tape, ax0, scalar, target);
}

GradientField input_gradients(const ModelSnapshot& snap, const TokenSequence& seq,
                              const ScalarTarget& target) {
    return input_gradients_at(snap, embed(snap, seq), target);
}

GradientField input_gradients_weighted(
    const ModelSnapshot& snap, const TokenSequence& seq,
    std::span<const std::pair<ScalarTarget, double>> targets) {
    const Matrix x0 = embed(snap, seq);
    for (const auto& [t, coeff] : targets) validate_target(snap, x0.rows, t);
    Tape tape;
    const SnapshotT<Ad> asnap = lift_snapshot(tape, snap);
    const AdMatrix ax0 = lift(tape, x0);
    const TraceT<Ad> trace = encode_from_embeddings(asnap, ax0);
    check_trace_finite(trace);
    Ad combined = make_ad(tape, 0.0);
    for (const auto& [t, coeff] : targets) {
        combined = combined + target_scalar(asnap, trace, t) * coeff;
    }
    return backward_from(tape, ax0, combined, targets.empty() ? ScalarTarget{} : targets[0].first);
}

GradientField finite_difference_gradients(const ModelSnapshot& snap, const TokenSequence& seq,
                                          const ScalarTarget& target, double h) {
    if (h <= 0.0) throw ProtocolError("finite differences need h > 0");
    Matrix x0 = embed(snap, seq);
    validate_target(snap, x0.rows, target);
    GradientField field;
    field.target = target;
    field.grads = Matrix(x0.rows, x0.cols);
    for (std::size_t k = 0; k < x0.data.size(); ++k) {
        const double orig = x0.data[k];
        x0.data[k] = orig + h;
        const double fp = scalar_output_at(snap, x0, target);
        x0.data[k] = orig - h;
        const double fm = scalar_output_at(snap, x0, target);
        x0.data[k] = orig;
        field.grads.data[k] = (fp - fm) / (2.0 * h);
    }
    return field;
}

Matrix make_baseline(const ModelSnapshot& snap, const TokenSequence& seq,
                     const BaselineSpec& spec) {
    const int n = seq.length();
    const int d = snap.config.d_model;
    Matrix base(n, d);
    if (spec.kind == BaselineSpec::Kind::zero_token_keep_pos) {
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < d; ++j) base.at(i, j) = snap.position_embeddings.at(i, j);
        }
    }
    return base;
}

Matrix integrated_gradients_raw(const ModelSnapshot& snap, const TokenSequence& seq,
                                const ScalarTarget& target, int steps,
                                const BaselineSpec& baseline) {
    if (steps < 1) throw ProtocolError("integrated gradients need steps >= 1");
    const Matrix x0 = embed(snap, seq);
    const Matrix base = make_baseline(snap, seq, baseline);
    if (base.rows != x0.rows || base.cols != x0.cols) {
        throw ShapeError("integrated gradients: baseline shape mismatch");
    }
    Matrix acc(x0.rows, x0.cols);
    Matrix point(x0.rows, x0.cols);
    for (int k = 1; k <= steps; ++k) {
        const double t = (static_cast<double>(k) - 0.5) / steps;
        for (std::size_t i = 0; i < x0.data.size(); ++i) {
            point.data[i] = base.data[i] + t * (x0.data[i] - base.data[i]);
        }
        const GradientField g = input_gradients_at(snap, point, target);
        for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += g.grads.data[i];
    }
    Matrix out(x0.rows, x0.cols);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = (x0.data[i] - base.data[i]) * acc.data[i] / steps;
    }
    return out;
}

} // namespace nxl
