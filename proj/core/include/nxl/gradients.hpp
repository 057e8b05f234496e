#pragma once

#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "nxl/autodiff.hpp"
#include "nxl/model.hpp"

namespace nxl {

// A differentiable scalar read off the model: a class logit at the
// CLS-analogue, the regression output, or one vocabulary logit at a given
// position. Gradients target pre-softmax logits throughout.
struct ScalarTarget {
    enum class Kind { class_logit, regression_output, vocab_logit };
    Kind kind = Kind::class_logit;
    int class_index = 0;
    int position = 0; // vocab_logit only
    int token_id = 0; // vocab_logit only

    static ScalarTarget class_logit(int c) {
        return ScalarTarget{Kind::class_logit, c, 0, 0};
    }
    static ScalarTarget regression() {
        return ScalarTarget{Kind::regression_output, 0, 0, 0};
    }
    static ScalarTarget vocab_logit(int position, int token_id) {
        return ScalarTarget{Kind::vocab_logit, 0, position, token_id};
    }
};

struct GradientField {
    Matrix grads; // n x d_model, d(target)/d(x^0)
    ScalarTarget target;
};

struct BaselineSpec {
    enum class Kind {
        zero_token_keep_pos, // token embeddings zeroed, position embeddings kept
        all_zero
    };
    Kind kind = Kind::zero_token_keep_pos;
};

// Snapshot lifting onto a tape. When param_indices is non-null it receives
// the tape index of every weight in for_each_param order.
SnapshotT<Ad> lift_snapshot(Tape& tape, const ModelSnapshot& snap,
                            std::vector<int>* param_indices = nullptr);

// Fixed traversal over every trainable scalar; the order is the contract
// shared with lift_snapshot.
void for_each_param(ModelSnapshot& snap, const std::function<void(double&)>& fn);

double scalar_output(const ModelSnapshot& snap, const TokenSequence& seq,
                     const ScalarTarget& target);
double scalar_output_at(const ModelSnapshot& snap, const Matrix& x0, const ScalarTarget& target);

GradientField input_gradients(const ModelSnapshot& snap, const TokenSequence& seq,
                              const ScalarTarget& target);
GradientField input_gradients_at(const ModelSnapshot& snap, const Matrix& x0,
                                 const ScalarTarget& target);

// Gradient of sum_i coeff_i * target_i, one tape.
GradientField input_gradients_weighted(
    const ModelSnapshot& snap, const TokenSequence& seq,
    std::span<const std::pair<ScalarTarget, double>> targets);

GradientField finite_difference_gradients(const ModelSnapshot& snap, const TokenSequence& seq,
                                          const ScalarTarget& target, double h);

Matrix make_baseline(const ModelSnapshot& snap, const TokenSequence& seq,
                     const BaselineSpec& spec);

// Midpoint Riemann sum over the straight path from baseline to the input
// embeddings; returns signed per-coordinate attributions (n x d_model).
Matrix integrated_gradients_raw(const ModelSnapshot& snap, const TokenSequence& seq,
                                const ScalarTarget& target, int steps,
                                const BaselineSpec& baseline);

} // namespace nxl
