#include "nxl/fixtures.hpp"

#include <cmath>
#include <string>

#include "nxl/gradients.hpp"
#include "nxl/rng.hpp"

namespace nxl {

namespace {

Matrix gaussian_matrix(Rng& rng, int rows, int cols, double std_dev) {
    Matrix m(rows, cols);
    for (double& x : m.data) x = rng.normal(0.0, std_dev);
    return m;
}

Vector gaussian_vector(Rng& rng, int len, double std_dev) {
    Vector v(len);
    for (double& x : v) x = rng.normal(0.0, std_dev);
    return v;
}

constexpr double kInitStd = 0.02;

} // namespace

ModelSnapshot generate_model(const ModelConfig& cfg, std::uint64_t seed,
                             const HeadSelection& heads) {
    cfg.validate();
    if (!heads.classification && !heads.regression && !heads.lm) {
        throw ProtocolError("model generation: at least one head must be selected");
    }
    Rng rng(seed);
    ModelSnapshot snap;
    snap.config = cfg;
    snap.token_embeddings = gaussian_matrix(rng, cfg.vocab_size, cfg.d_model, kInitStd);
    snap.position_embeddings = gaussian_matrix(rng, cfg.max_seq_len, cfg.d_model, kInitStd);
    for (int l = 0; l < cfg.n_layers; ++l) {
        EncoderLayerT<double> layer;
        for (int h = 0; h < cfg.n_heads; ++h) {
            AttentionHeadT<double> head;
            head.wq = gaussian_matrix(rng, cfg.d_model, cfg.d_head, kInitStd);
            head.bq = gaussian_vector(rng, cfg.d_head, kInitStd);
            head.wk = gaussian_matrix(rng, cfg.d_model, cfg.d_head, kInitStd);
            head.bk = gaussian_vector(rng, cfg.d_head, kInitStd);
            head.wv = gaussian_matrix(rng, cfg.d_model, cfg.d_head, kInitStd);
            head.bv = gaussian_vector(rng, cfg.d_head, kInitStd);
            head.wo = gaussian_matrix(rng, cfg.d_head, cfg.d_model, kInitStd);
            layer.heads.push_back(std::move(head));
        }
        layer.bo = gaussian_vector(rng, cfg.d_model, kInitStd);
        layer.ffn_w1 = gaussian_matrix(rng, cfg.d_model, cfg.d_ff, kInitStd);
        layer.ffn_b1 = gaussian_vector(rng, cfg.d_ff, kInitStd);
        layer.ffn_w2 = gaussian_matrix(rng, cfg.d_ff, cfg.d_model, kInitStd);
        layer.ffn_b2 = gaussian_vector(rng, cfg.d_model, kInitStd);
        layer.ln1_gain.assign(cfg.d_model, 1.0);
        layer.ln1_bias.assign(cfg.d_model, 0.0);
        layer.ln2_gain.assign(cfg.d_model, 1.0);
        layer.ln2_bias.assign(cfg.d_model, 0.0);
        snap.layers.push_back(std::move(layer));
    }
    if (heads.classification) {
        ClassificationHeadT<double> head;
        head.w = gaussian_matrix(rng, cfg.n_classes, cfg.d_model, kInitStd);
        head.b = gaussian_vector(rng, cfg.n_classes, kInitStd);
        snap.classification_head = std::move(head);
    }
    if (heads.regression) {
        RegressionHeadT<double> head;
        head.w = gaussian_vector(rng, cfg.d_model, kInitStd);
        head.b = rng.normal(0.0, kInitStd);
        snap.regression_head = std::move(head);
    }
    if (heads.lm) {
        LmHeadT<double> head;
        head.w = gaussian_matrix(rng, cfg.vocab_size, cfg.d_model, kInitStd);
        head.b = gaussian_vector(rng, cfg.vocab_size, kInitStd);
        snap.lm_head = std::move(head);
    }
    return snap;
}

LabeledDataset generate_planted_dataset(const PlantedDataOptions& opts) {
    if (opts.count < 1) throw ProtocolError("planted dataset: count must be >= 1");
    if (opts.min_len < 2 || opts.max_len < opts.min_len) {
        throw ProtocolError("planted dataset: need 2 <= min_len <= max_len");
    }
    if (opts.planted_token < 2 || opts.planted_token >= opts.vocab_size) {
        throw ProtocolError("planted dataset: planted token must be a regular vocab id");
    }
    Rng rng(opts.seed);
    LabeledDataset ds;
    ds.task = opts.task;
    for (int i = 0; i < opts.count; ++i) {
        const bool positive = i % 2 == 0;
        const int n = opts.min_len +
                      static_cast<int>(rng.below(static_cast<std::uint64_t>(
                          opts.max_len - opts.min_len + 1)));
        Instance inst;
        inst.id = std::to_string(i);
        inst.sequence.token_ids.resize(n);
        inst.sequence.token_ids[0] = kClsTokenId;
        for (int p = 1; p < n; ++p) {
            // Regular ids only, planted token excluded.
            int id;
            do {
                id = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(opts.vocab_size - 2)));
            } while (id == opts.planted_token);
            inst.sequence.token_ids[p] = id;
        }
        if (positive) {
            const int pos = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 1)));
            inst.sequence.token_ids[pos] = opts.planted_token;
            EvidenceVector ev;
            ev.bits.assign(n, 0);
            ev.bits[pos] = 1;
            inst.evidence = std::move(ev);
        }
        if (opts.task == TaskKind::regression) {
            inst.gold_score = positive ? 1.0 : 0.0;
        } else {
            inst.gold_label = positive ? 1 : 0;
        }
        ds.instances.push_back(std::move(inst));
    }
    return ds;
}

LabeledDataset generate_agreement_dataset(const AgreementDataOptions& opts) {
    if (opts.count < 1) throw ProtocolError("agreement dataset: count must be >= 1");
    if (opts.vocab_size < 8) throw ProtocolError("agreement dataset: vocab_size must be >= 8");
    if (opts.min_len < 4 || opts.max_len < opts.min_len) {
        throw ProtocolError("agreement dataset: need 4 <= min_len <= max_len");
    }
    // Fixed role ids: two subject forms and the two candidate tokens they
    // select at the MASK position.
    const int subj_a = 2, subj_b = 3, cand_a = 4, cand_b = 5;
    Rng rng(opts.seed);
    LabeledDataset ds;
    ds.task = TaskKind::masked_lm;
    for (int i = 0; i < opts.count; ++i) {
        const bool form_a = rng.below(2) == 0;
        const int n = opts.min_len +
                      static_cast<int>(rng.below(static_cast<std::uint64_t>(
                          opts.max_len - opts.min_len + 1)));
        Instance inst;
        inst.id = std::to_string(i);
        inst.sequence.token_ids.resize(n);
        inst.sequence.token_ids[0] = kClsTokenId;
        for (int p = 1; p < n; ++p) {
            inst.sequence.token_ids[p] =
                6 + static_cast<int>(rng.below(static_cast<std::uint64_t>(opts.vocab_size - 6)));
        }
        const int subj_pos = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 1)));
        int mask_pos;
        do {
            mask_pos = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 1)));
        } while (mask_pos == subj_pos);
        inst.sequence.token_ids[subj_pos] = form_a ? subj_a : subj_b;
        inst.sequence.token_ids[mask_pos] = kMaskTokenId;
        inst.sequence.special_positions = {0, mask_pos};
        inst.target_token = form_a ? cand_a : cand_b;
        inst.foil_token = form_a ? cand_b : cand_a;
        inst.gold_label = *inst.target_token;
        EvidenceVector ev;
        ev.bits.assign(n, 0);
        ev.bits[subj_pos] = 1;
        inst.evidence = std::move(ev);
        ds.instances.push_back(std::move(inst));
    }
    return ds;
}

namespace {

AdMatrix embed_ad(Tape& tape, const SnapshotT<Ad>& asnap, const TokenSequence& seq) {
    (void)tape;
    const int n = seq.length();
    const int d = asnap.config.d_model;
    AdMatrix x0(n, d);
    for (int i = 0; i < n; ++i) {
        const int id = seq.token_ids[i];
        for (int j = 0; j < d; ++j) {
            x0.at(i, j) = asnap.token_embeddings.at(id, j) + asnap.position_embeddings.at(i, j);
        }
    }
    return x0;
}

} // namespace

TrainResult train_classifier(ModelSnapshot& snap, const LabeledDataset& data,
                             const TrainOptions& opts) {
    if (data.task != TaskKind::classification) {
        throw ProtocolError("train_classifier expects a classification dataset");
    }
    if (!snap.classification_head) throw MissingHeadError("training needs a classification head");
    data.validate(snap.config);
    const double m = static_cast<double>(data.instances.size());

    auto accuracy = [&]() {
        int correct = 0;
        for (const Instance& inst : data.instances) {
            if (predict(snap, inst.sequence, TaskKind::classification).label == inst.gold_label) {
                ++correct;
            }
        }
        return correct / m;
    };

    TrainResult result;
    std::vector<double> velocity;
    Tape tape;
    for (int step = 0; step < opts.max_steps; ++step) {
        tape.clear();
        std::vector<int> params;
        const SnapshotT<Ad> asnap = lift_snapshot(tape, snap, &params);
        Ad total = make_ad(tape, 0.0);
        for (const Instance& inst : data.instances) {
            const AdMatrix x0 = embed_ad(tape, asnap, inst.sequence);
            const TraceT<Ad> trace = encode_from_embeddings(asnap, x0);
            const int cls = snap.config.cls_position(inst.sequence.length());
            const auto& head = *asnap.classification_head;
            std::vector<Ad> rep = trace.final_layer().row(cls);
            std::vector<Ad> logits;
            for (int c = 0; c < snap.config.n_classes; ++c) {
                Ad acc = head.b[c];
                for (int j = 0; j < head.w.cols; ++j) acc = acc + head.w.at(c, j) * rep[j];
                logits.push_back(acc);
            }
            // log-sum-exp with primal max shift.
            double shift = logits[0].val;
            for (const Ad& l : logits) shift = std::max(shift, l.val);
            Ad sum_exp = make_ad(tape, 0.0);
            for (const Ad& l : logits) sum_exp = sum_exp + exp(l - shift);
            const Ad loss = (log(sum_exp) + shift) - logits[inst.gold_label];
            total = total + loss;
        }
        const Ad mean_loss = total / m;
        result.final_loss = mean_loss.val;
        if (!std::isfinite(result.final_loss)) {
            throw NumericError("training diverged at step " + std::to_string(step));
        }
        const std::vector<double> adj = tape.backward(mean_loss.idx);
        if (velocity.empty()) velocity.assign(params.size(), 0.0);
        std::size_t pi = 0;
        for_each_param(snap, [&](double& w) {
            double& v = velocity[pi];
            v = opts.momentum * v + adj[params[pi]] + opts.weight_decay * w;
            w -= opts.learning_rate * v;
            ++pi;
        });
        result.steps_run = step + 1;
        if (opts.eval_every > 0 && (step + 1) % opts.eval_every == 0 &&
            result.final_loss <= opts.target_loss && accuracy() >= opts.target_accuracy) {
            break;
        }
    }

    result.final_accuracy = accuracy();
    if (result.final_accuracy < opts.target_accuracy) {
        throw NumericError("planted fixture failed to reach " +
                           std::to_string(opts.target_accuracy) + " train accuracy (got " +
                           std::to_string(result.final_accuracy) + ")");
    }
    return result;
}

} // namespace nxl
