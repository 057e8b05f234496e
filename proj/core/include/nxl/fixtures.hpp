#pragma once

#include <cstdint>

#include "nxl/evaluation.hpp"
#include "nxl/model.hpp"

namespace nxl {

// Reserved vocabulary ids used by the synthetic datasets.
inline constexpr int kClsTokenId = 0;
inline constexpr int kMaskTokenId = 1;
inline constexpr int kDefaultPlantedTokenId = 2;

struct HeadSelection {
    bool classification = true;
    bool regression = false;
    bool lm = false;
};

// Seeded Gaussian init (std 0.02), layer norms at gain 1 / bias 0.
ModelSnapshot generate_model(const ModelConfig& cfg, std::uint64_t seed,
                             const HeadSelection& heads);

struct PlantedDataOptions {
    int count = 200;
    int min_len = 5;
    int max_len = 8;
    int vocab_size = 24;
    int planted_token = kDefaultPlantedTokenId;
    std::uint64_t seed = 0;
    TaskKind task = TaskKind::classification; // classification or regression
};

// Binary task whose label (or score) is 1 exactly when the planted token is
// present; positive instances carry evidence bits marking its position.
LabeledDataset generate_planted_dataset(const PlantedDataOptions& opts);

struct AgreementDataOptions {
    int count = 100;
    int min_len = 5;
    int max_len = 8;
    int vocab_size = 24;
    std::uint64_t seed = 0;
};

// Masked-LM instances in the agreement style: a subject token determines
// which of two candidate tokens belongs at the MASK position; the subject
// position is the evidence.
LabeledDataset generate_agreement_dataset(const AgreementDataOptions& opts);

struct TrainOptions {
    int max_steps = 2000;
    double learning_rate = 0.5;
    double momentum = 0.0;
    double weight_decay = 0.0;
    double target_accuracy = 0.99;
    // Training stops early once the accuracy target is met and the mean loss
    // has dropped below target_loss; the check runs every eval_every steps.
    // The default stops at the first accuracy crossing: training further
    // saturates the logits and erodes the per-position interpretability the
    // planted fixture exists to demonstrate.
    double target_loss = 1.0;
    int eval_every = 10;
    std::uint64_t seed = 0;
};

struct TrainResult {
    int steps_run = 0;
    double final_loss = 0.0;
    double final_accuracy = 0.0;
};

// Full-batch gradient descent on softmax cross-entropy. Throws NumericError
// when the accuracy threshold is not reached within max_steps.
TrainResult train_classifier(ModelSnapshot& snap, const LabeledDataset& data,
                             const TrainOptions& opts);

} // namespace nxl
