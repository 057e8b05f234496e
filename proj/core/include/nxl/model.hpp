#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "nxl/errors.hpp"
#include "nxl/linalg.hpp"

namespace nxl {

struct ModelConfig {
    int n_layers = 1;
    int n_heads = 1;
    int d_model = 8;
    int d_head = 8; // d_model / n_heads
    int d_ff = 16;
    int vocab_size = 16;
    int max_seq_len = 16;
    int n_classes = 2;
    double ln_eps = 1e-5;
    // When true, whole-sequence prediction reads the last token instead of
    // position 0 (auto-regressive style classification).
    bool cls_at_end = false;

    void validate() const;
    int cls_position(int seq_len) const { return cls_at_end ? seq_len - 1 : 0; }
};

template <class S>
struct AttentionHeadT {
    MatT<S> wq, wk, wv; // d_model x d_head
    std::vector<S> bq, bk, bv; // d_head
    MatT<S> wo; // d_head x d_model
};

template <class S>
struct EncoderLayerT {
    std::vector<AttentionHeadT<S>> heads;
    std::vector<S> bo; // d_model, shared output bias
    MatT<S> ffn_w1; // d_model x d_ff
    std::vector<S> ffn_b1;
    MatT<S> ffn_w2; // d_ff x d_model
    std::vector<S> ffn_b2;
    std::vector<S> ln1_gain, ln1_bias;
    std::vector<S> ln2_gain, ln2_bias;
};

template <class S>
struct ClassificationHeadT {
    MatT<S> w; // n_classes x d_model
    std::vector<S> b;
};

template <class S>
struct RegressionHeadT {
    std::vector<S> w; // d_model
    S b;
};

template <class S>
struct LmHeadT {
    MatT<S> w; // vocab_size x d_model (unembedding)
    std::vector<S> b;
};

template <class S>
struct SnapshotT {
    ModelConfig config;
    MatT<S> token_embeddings; // vocab_size x d_model
    MatT<S> position_embeddings; // max_seq_len x d_model
    std::vector<EncoderLayerT<S>> layers;
    std::optional<ClassificationHeadT<S>> classification_head;
    std::optional<RegressionHeadT<S>> regression_head;
    std::optional<LmHeadT<S>> lm_head;
};

using ModelSnapshot = SnapshotT<double>;

struct TokenSequence {
    std::vector<int> token_ids;
    // Position 0 is always the CLS-analogue; at most one additional special
    // position marks the MASK slot.
    std::set<int> special_positions{0};

    int length() const { return static_cast<int>(token_ids.size()); }
    std::optional<int> mask_position() const {
        for (int p : special_positions) {
            if (p != 0) return p;
        }
        return std::nullopt;
    }
    void validate(const ModelConfig& cfg) const;
};

template <class S>
struct TraceT {
    MatT<S> input_embeddings; // n x d_model (x^0)
    std::vector<MatT<S>> layer_outputs; // x^1 .. x^L, each n x d_model
    std::vector<std::vector<MatT<S>>> attention_weights; // [layer][head], n x n
    std::vector<std::vector<MatT<S>>> value_vectors; // [layer][head], n x d_head
    std::vector<MatT<S>> mha_outputs; // per layer, n x d_model, pre-residual
    std::vector<std::vector<std::vector<S>>> cls_head_outputs; // [layer][head], d_head

    int seq_len() const { return input_embeddings.rows; }
    const MatT<S>& final_layer() const {
        return layer_outputs.empty() ? input_embeddings : layer_outputs.back();
    }
    std::vector<S> representation(int layer, int position) const {
        return layer == 0 ? input_embeddings.row(position)
                          : layer_outputs[layer - 1].row(position);
    }
};

using ForwardTrace = TraceT<double>;

struct Prediction {
    // Classification: predicted label + softmax probabilities.
    // Regression: scalar in `value`.
    // Masked LM: predicted vocab id + distribution at the MASK position.
    int label = -1;
    Vector probabilities;
    double value = 0.0;
};

Matrix embed(const ModelSnapshot& snapshot, const TokenSequence& seq);
ForwardTrace encode(const ModelSnapshot& snapshot, const TokenSequence& seq);

Vector apply_classification_head(const ModelSnapshot& snapshot, const Vector& rep);
double apply_regression_head(const ModelSnapshot& snapshot, const Vector& rep);
Vector apply_lm_head(const ModelSnapshot& snapshot, const Vector& rep);

enum class TaskKind { classification, regression, masked_lm };

Prediction predict(const ModelSnapshot& snapshot, const TokenSequence& seq, TaskKind task);

int argmax_lowest_tie(const Vector& v);

// ---- templated encoder core, shared by double and autodiff paths ----

template <class S>
TraceT<S> encode_from_embeddings(const SnapshotT<S>& snap, const MatT<S>& x0) {
    const ModelConfig& cfg = snap.config;
    const int n = x0.rows;
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_head));

    TraceT<S> trace;
    trace.input_embeddings = x0;

    MatT<S> x = x0;
    for (int l = 0; l < cfg.n_layers; ++l) {
        const EncoderLayerT<S>& layer = snap.layers[l];
        std::vector<MatT<S>> alphas;
        std::vector<MatT<S>> values;
        std::vector<std::vector<S>> cls_heads;
        MatT<S> mha(n, cfg.d_model);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < cfg.d_model; ++j) mha.at(i, j) = layer.bo[j];
        }
        const int cls = cfg.cls_position(n);
        for (int h = 0; h < cfg.n_heads; ++h) {
            const AttentionHeadT<S>& head = layer.heads[h];
            MatT<S> q = matmul_t(x, head.wq);
            MatT<S> k = matmul_t(x, head.wk);
            MatT<S> v = matmul_t(x, head.wv);
            for (int i = 0; i < n; ++i) {
                for (int d = 0; d < cfg.d_head; ++d) {
                    q.at(i, d) = q.at(i, d) + head.bq[d];
                    k.at(i, d) = k.at(i, d) + head.bk[d];
                    v.at(i, d) = v.at(i, d) + head.bv[d];
                }
            }
            MatT<S> alpha(n, n);
            for (int i = 0; i < n; ++i) {
                std::vector<S> scores;
                scores.reserve(n);
                for (int j = 0; j < n; ++j) {
                    S s = dot_t(q.row(i), k.row(j)) * scale;
                    scores.push_back(s);
                }
                std::vector<S> row = softmax_t(scores);
                for (int j = 0; j < n; ++j) alpha.at(i, j) = row[j];
            }
            MatT<S> head_out = matmul_t(alpha, v); // n x d_head
            MatT<S> projected = matmul_t(head_out, head.wo); // n x d_model
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < cfg.d_model; ++j) {
                    mha.at(i, j) = mha.at(i, j) + projected.at(i, j);
                }
            }
            alphas.push_back(std::move(alpha));
            values.push_back(std::move(v));
            cls_heads.push_back(head_out.row(cls));
        }
        trace.mha_outputs.push_back(mha);

        // Post-LN: sublayer -> residual -> layer norm.
        MatT<S> after_attn(n, cfg.d_model);
        for (int i = 0; i < n; ++i) {
            std::vector<S> summed;
            summed.reserve(cfg.d_model);
            for (int j = 0; j < cfg.d_model; ++j) summed.push_back(x.at(i, j) + mha.at(i, j));
            std::vector<S> normed = layer_norm_t(summed, layer.ln1_gain, layer.ln1_bias, cfg.ln_eps);
            for (int j = 0; j < cfg.d_model; ++j) after_attn.at(i, j) = normed[j];
        }

        MatT<S> hidden = matmul_t(after_attn, layer.ffn_w1);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < cfg.d_ff; ++j) {
                hidden.at(i, j) = gelu_t(hidden.at(i, j) + layer.ffn_b1[j]);
            }
        }
        MatT<S> ffn = matmul_t(hidden, layer.ffn_w2);
        MatT<S> out(n, cfg.d_model);
        for (int i = 0; i < n; ++i) {
            std::vector<S> summed;
            summed.reserve(cfg.d_model);
            for (int j = 0; j < cfg.d_model; ++j) {
                summed.push_back(after_attn.at(i, j) + ffn.at(i, j) + layer.ffn_b2[j]);
            }
            std::vector<S> normed = layer_norm_t(summed, layer.ln2_gain, layer.ln2_bias, cfg.ln_eps);
            for (int j = 0; j < cfg.d_model; ++j) out.at(i, j) = normed[j];
        }

        trace.attention_weights.push_back(std::move(alphas));
        trace.value_vectors.push_back(std::move(values));
        trace.cls_head_outputs.push_back(std::move(cls_heads));
        trace.layer_outputs.push_back(out);
        x = std::move(out);
    }
    return trace;
}

} // namespace nxl
