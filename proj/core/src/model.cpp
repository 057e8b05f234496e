#include "nxl/model.hpp"

#include <string>

namespace nxl {

void ModelConfig::validate() const {
    if (n_layers < 0) throw ShapeError("config: n_layers must be >= 0");
    if (n_heads < 1 || d_model < 1 || d_ff < 1 || vocab_size < 1 || max_seq_len < 1) {
        throw ShapeError("config: all dimensions must be >= 1");
    }
    if (d_model != n_heads * d_head) {
        throw ShapeError("config: d_model must equal n_heads * d_head");
    }
    if (ln_eps <= 0.0) throw ShapeError("config: ln_eps must be positive");
}

void TokenSequence::validate(const ModelConfig& cfg) const {
    if (token_ids.empty()) throw VocabError("sequence: empty");
    if (length() > cfg.max_seq_len) {
        throw VocabError("sequence: length " + std::to_string(length()) +
                         " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    for (int id : token_ids) {
        if (id < 0 || id >= cfg.vocab_size) {
            throw VocabError("sequence: token id " + std::to_string(id) + " out of vocabulary");
        }
    }
    if (!special_positions.contains(0)) {
        throw VocabError("sequence: position 0 must be flagged special (CLS-analogue)");
    }
    for (int p : special_positions) {
        if (p < 0 || p >= length()) throw VocabError("sequence: special position out of range");
    }
}

Matrix embed(const ModelSnapshot& snapshot, const TokenSequence& seq) {
    seq.validate(snapshot.config);
    const int n = seq.length();
    const int d = snapshot.config.d_model;
    Matrix x0(n, d);
    for (int i = 0; i < n; ++i) {
        const int id = seq.token_ids[i];
        for (int j = 0; j < d; ++j) {
            x0.at(i, j) = snapshot.token_embeddings.at(id, j) +
                          snapshot.position_embeddings.at(i, j);
        }
    }
    return x0;
}

ForwardTrace encode(const ModelSnapshot& snapshot, const TokenSequence& seq) {
    return encode_from_embeddings(snapshot, embed(snapshot, seq));
}

Vector apply_classification_head(const ModelSnapshot& snapshot, const Vector& rep) {
    if (!snapshot.classification_head) throw MissingHeadError("no classification head attached");
    const auto& head = *snapshot.classification_head;
    Vector out(head.b);
    for (int c = 0; c < head.w.rows; ++c) {
        for (int j = 0; j < head.w.cols; ++j) out[c] += head.w.at(c, j) * rep[j];
    }
    return out;
}

double apply_regression_head(const ModelSnapshot& snapshot, const Vector& rep) {
    if (!snapshot.regression_head) throw MissingHeadError("no regression head attached");
    const auto& head = *snapshot.regression_head;
    double out = head.b;
    for (std::size_t j = 0; j < head.w.size(); ++j) out += head.w[j] * rep[j];
    return out;
}

Vector apply_lm_head(const ModelSnapshot& snapshot, const Vector& rep) {
    if (!snapshot.lm_head) throw MissingHeadError("no LM head attached");
    const auto& head = *snapshot.lm_head;
    Vector out(head.b);
    for (int t = 0; t < head.w.rows; ++t) {
        for (int j = 0; j < head.w.cols; ++j) out[t] += head.w.at(t, j) * rep[j];
    }
    return out;
}

int argmax_lowest_tie(const Vector& v) {
    int best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = static_cast<int>(i);
    }
    return best;
}

Prediction predict(const ModelSnapshot& snapshot, const TokenSequence& seq, TaskKind task) {
    const ForwardTrace trace = encode(snapshot, seq);
    const int cls = snapshot.config.cls_position(seq.length());
    Prediction pred;
    switch (task) {
        case TaskKind::classification: {
            const Vector logits =
                apply_classification_head(snapshot, trace.final_layer().row(cls));
            pred.label = argmax_lowest_tie(logits);
            pred.probabilities = softmax(logits);
            break;
        }
        case TaskKind::regression: {
            pred.value = apply_regression_head(snapshot, trace.final_layer().row(cls));
            break;
        }
        case TaskKind::masked_lm: {
            const auto mask = seq.mask_position();
            if (!mask) {
                throw ProtocolError("masked LM prediction requires a flagged MASK position");
            }
            const Vector logits = apply_lm_head(snapshot, trace.final_layer().row(*mask));
            pred.label = argmax_lowest_tie(logits);
            pred.probabilities = softmax(logits);
            break;
        }
    }
    return pred;
}

} // namespace nxl
