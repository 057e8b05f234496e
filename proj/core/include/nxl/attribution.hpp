#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nxl/gradients.hpp"
#include "nxl/model.hpp"

namespace nxl {

enum class AttributionMethod {
    l2norm,
    logat,
    normxlogit,
    grad_norm,
    grad_x_input,
    integrated_gradients,
    random
};

std::string method_name(AttributionMethod m);
AttributionMethod method_from_name(const std::string& name);

struct AttributionRequest {
    AttributionMethod method = AttributionMethod::normxlogit;
    TaskKind task = TaskKind::classification;
    std::optional<int> target_label; // class index or vocab token id; default: predicted
    std::optional<int> layer; // 0..L; default L
    int ig_steps = 50;
    BaselineSpec ig_baseline;
    std::uint64_t seed = 0;
};

struct AttributionResult {
    Vector scores; // one per token position
    bool signed_scores = false;
    std::string method;
    int target_label = -1;
    int layer = -1;
    std::uint64_t seed = 0;
};

AttributionResult attr_l2norm(const ForwardTrace& trace);
AttributionResult attr_logat_classification(const ModelSnapshot& snap, const ForwardTrace& trace,
                                            int class_index, int layer);
AttributionResult attr_logat_regression(const ModelSnapshot& snap, const ForwardTrace& trace,
                                        int layer);
AttributionResult attr_logat_lm(const ModelSnapshot& snap, const ForwardTrace& trace,
                                int vocab_token, int layer);
AttributionResult attr_normxlogit(const ModelSnapshot& snap, const ForwardTrace& trace,
                                  const AttributionRequest& request);
AttributionResult attr_grad_norm(const ModelSnapshot& snap, const TokenSequence& seq,
                                 const ScalarTarget& target);
AttributionResult attr_grad_x_input(const ModelSnapshot& snap, const TokenSequence& seq,
                                    const ScalarTarget& target);
AttributionResult attr_integrated_gradients(const ModelSnapshot& snap, const TokenSequence& seq,
                                            const ScalarTarget& target, int steps,
                                            const BaselineSpec& baseline);
AttributionResult attr_random(const TokenSequence& seq, std::uint64_t seed);

// Eligible positions sorted by score descending, ties broken by lower
// position index. With abs_ranking, magnitudes are compared instead.
std::vector<int> rank_tokens(const AttributionResult& result, const std::vector<int>& eligible,
                             bool abs_ranking = false);

// Non-special positions of a sequence, in ascending order.
std::vector<int> eligible_positions(const TokenSequence& seq);

// Dispatcher resolving request defaults (predicted label, last layer) and
// running the requested method end to end.
AttributionResult attribute(const ModelSnapshot& snap, const TokenSequence& seq,
                            const AttributionRequest& request);

} // namespace nxl
