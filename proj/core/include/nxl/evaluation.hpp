#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nxl/attribution.hpp"
#include "nxl/model.hpp"

namespace nxl {

struct EvidenceVector {
    std::vector<int> bits; // 0/1 per token position
};

struct Instance {
    std::string id;
    TokenSequence sequence;
    int gold_label = -1; // classification; masked LM uses target_token
    double gold_score = 0.0; // regression
    std::optional<EvidenceVector> evidence;
    std::optional<int> target_token;
    std::optional<int> foil_token;
};

struct LabeledDataset {
    TaskKind task = TaskKind::classification;
    std::vector<Instance> instances;

    void validate(const ModelConfig& cfg) const;
};

LabeledDataset load_dataset(const std::string& path, TaskKind task);
void save_dataset(const LabeledDataset& dataset, const std::string& path);

struct PerturbationSpec {
    enum class Mode { mask, del };
    Mode mode = Mode::mask;
    std::vector<double> ratios = {10, 20, 30, 40, 50, 60, 70, 80, 90, 100}; // percent
    int mask_token_id = 1;

    void validate(const ModelConfig& cfg) const;
};

struct PerturbOutcome {
    TokenSequence sequence;
    // Delete mode can leave nothing but special tokens; such instances are
    // skipped and counted by the dataset-level loops.
    bool degenerate = false;
};

PerturbOutcome perturb(const TokenSequence& seq, const std::vector<int>& ranking, double ratio,
                       const PerturbationSpec& spec);

struct FaithfulnessReport {
    std::string metric; // "aopc" or "accuracy"
    std::string method;
    std::vector<double> ratios;
    std::vector<double> values; // one per ratio
    std::vector<int> skipped; // degenerate instances per ratio
    double mean = 0.0;
    int skipped_total = 0;
};

FaithfulnessReport aopc(const ModelSnapshot& snap, const LabeledDataset& dataset,
                        const AttributionRequest& request, const PerturbationSpec& spec);

FaithfulnessReport accuracy_under_perturbation(const ModelSnapshot& snap,
                                               const LabeledDataset& dataset,
                                               const AttributionRequest& request,
                                               const PerturbationSpec& spec);

double pearson(const Vector& a, const Vector& b);

// Both alignment kernels operate on whatever score/evidence vectors they are
// handed; dataset-level loops pass the non-special positions only.
double dot_alignment(const EvidenceVector& evidence, const AttributionResult& result);
double average_precision(const EvidenceVector& evidence, const AttributionResult& result);

struct AlignmentRow {
    std::string variant;
    int layer = 0;
    double mean_dot = 0.0;
    double mean_ap = 0.0;
};

struct AlignmentReport {
    std::vector<AlignmentRow> rows;
};

// Per-layer LogAt/NormXLogit alignment plus the layer-0 embedding-norm row.
// Known variants: logat_target, logat_foil, logat_arbitrary, normxlogit,
// l2norm.
AlignmentReport per_layer_alignment(const ModelSnapshot& snap, const LabeledDataset& dataset,
                                    const std::vector<std::string>& variants,
                                    std::optional<int> arbitrary_token = std::nullopt);

} // namespace nxl
