#include "nxl/serialize.hpp"

#include <fstream>
#include <sstream>

#include <openssl/sha.h>

#include <json.hpp>

namespace nxl {

// std::map-backed json: object keys always serialize in sorted order, which
// is what makes the canonical form canonical.
using json = nlohmann::json;

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * SHA256_DIGEST_LENGTH);
    for (unsigned char b : digest) {
        out.push_back(hex[b >> 4]);
        out.push_back(hex[b & 0xf]);
    }
    return out;
}

namespace {

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (int r = 0; r < m.rows; ++r) {
        json row = json::array();
        for (int c = 0; c < m.cols; ++c) row.push_back(m.at(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const json& j, int rows, int cols, const std::string& name) {
    if (!j.is_array() || static_cast<int>(j.size()) != rows) {
        throw LoadError("model file: " + name + " has wrong row count");
    }
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        const json& row = j[r];
        if (!row.is_array() || static_cast<int>(row.size()) != cols) {
            throw LoadError("model file: " + name + " has wrong column count");
        }
        for (int c = 0; c < cols; ++c) m.at(r, c) = row[c].get<double>();
    }
    if (!all_finite(m)) throw LoadError("model file: " + name + " contains non-finite values");
    return m;
}

Vector vector_from_json(const json& j, int len, const std::string& name) {
    if (!j.is_array() || static_cast<int>(j.size()) != len) {
        throw LoadError("model file: " + name + " has wrong length");
    }
    Vector v(len);
    for (int i = 0; i < len; ++i) v[i] = j[i].get<double>();
    if (!all_finite(v)) throw LoadError("model file: " + name + " contains non-finite values");
    return v;
}

json config_to_json(const ModelConfig& cfg) {
    return json{{"cls_at_end", cfg.cls_at_end},
                {"d_ff", cfg.d_ff},
                {"d_head", cfg.d_head},
                {"d_model", cfg.d_model},
                {"ln_eps", cfg.ln_eps},
                {"max_seq_len", cfg.max_seq_len},
                {"n_classes", cfg.n_classes},
                {"n_heads", cfg.n_heads},
                {"n_layers", cfg.n_layers},
                {"vocab_size", cfg.vocab_size}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.cls_at_end = j.at("cls_at_end").get<bool>();
    cfg.d_ff = j.at("d_ff").get<int>();
    cfg.d_head = j.at("d_head").get<int>();
    cfg.d_model = j.at("d_model").get<int>();
    cfg.ln_eps = j.at("ln_eps").get<double>();
    cfg.max_seq_len = j.at("max_seq_len").get<int>();
    cfg.n_classes = j.at("n_classes").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    return cfg;
}

json body_to_json(const ModelSnapshot& s) {
    const ModelConfig& cfg = s.config;
    json layers = json::array();
    for (const auto& layer : s.layers) {
        json heads = json::array();
        for (const auto& h : layer.heads) {
            heads.push_back(json{{"bk", h.bk},
                                 {"bq", h.bq},
                                 {"bv", h.bv},
                                 {"wk", matrix_to_json(h.wk)},
                                 {"wo", matrix_to_json(h.wo)},
                                 {"wq", matrix_to_json(h.wq)},
                                 {"wv", matrix_to_json(h.wv)}});
        }
        layers.push_back(json{{"bo", layer.bo},
                              {"ffn_b1", layer.ffn_b1},
                              {"ffn_b2", layer.ffn_b2},
                              {"ffn_w1", matrix_to_json(layer.ffn_w1)},
                              {"ffn_w2", matrix_to_json(layer.ffn_w2)},
                              {"heads", std::move(heads)},
                              {"ln1_bias", layer.ln1_bias},
                              {"ln1_gain", layer.ln1_gain},
                              {"ln2_bias", layer.ln2_bias},
                              {"ln2_gain", layer.ln2_gain}});
    }
    json heads = json::object();
    if (s.classification_head) {
        heads["classification"] =
            json{{"b", s.classification_head->b}, {"w", matrix_to_json(s.classification_head->w)}};
    }
    if (s.regression_head) {
        heads["regression"] = json{{"b", s.regression_head->b}, {"w", s.regression_head->w}};
    }
    if (s.lm_head) {
        heads["lm"] = json{{"b", s.lm_head->b}, {"w", matrix_to_json(s.lm_head->w)}};
    }
    return json{{"config", config_to_json(cfg)},
                {"heads", std::move(heads)},
                {"version", kModelFileVersion},
                {"weights",
                 json{{"layers", std::move(layers)},
                      {"position_embeddings", matrix_to_json(s.position_embeddings)},
                      {"token_embeddings", matrix_to_json(s.token_embeddings)}}}};
}

ModelSnapshot body_from_json(const json& j) {
    ModelSnapshot s;
    if (j.at("version").get<int>() != kModelFileVersion) {
        throw LoadError("model file: unknown version");
    }
    s.config = config_from_json(j.at("config"));
    s.config.validate();
    const ModelConfig& cfg = s.config;

    const json& w = j.at("weights");
    s.token_embeddings =
        matrix_from_json(w.at("token_embeddings"), cfg.vocab_size, cfg.d_model, "token_embeddings");
    s.position_embeddings = matrix_from_json(w.at("position_embeddings"), cfg.max_seq_len,
                                             cfg.d_model, "position_embeddings");
    const json& layers = w.at("layers");
    if (static_cast<int>(layers.size()) != cfg.n_layers) {
        throw LoadError("model file: layer count disagrees with config");
    }
    for (const json& lj : layers) {
        EncoderLayerT<double> layer;
        const json& heads = lj.at("heads");
        if (static_cast<int>(heads.size()) != cfg.n_heads) {
            throw LoadError("model file: head count disagrees with config");
        }
        for (const json& hj : heads) {
            AttentionHeadT<double> h;
            h.wq = matrix_from_json(hj.at("wq"), cfg.d_model, cfg.d_head, "wq");
            h.wk = matrix_from_json(hj.at("wk"), cfg.d_model, cfg.d_head, "wk");
            h.wv = matrix_from_json(hj.at("wv"), cfg.d_model, cfg.d_head, "wv");
            h.wo = matrix_from_json(hj.at("wo"), cfg.d_head, cfg.d_model, "wo");
            h.bq = vector_from_json(hj.at("bq"), cfg.d_head, "bq");
            h.bk = vector_from_json(hj.at("bk"), cfg.d_head, "bk");
            h.bv = vector_from_json(hj.at("bv"), cfg.d_head, "bv");
            layer.heads.push_back(std::move(h));
        }
        layer.bo = vector_from_json(lj.at("bo"), cfg.d_model, "bo");
        layer.ffn_w1 = matrix_from_json(lj.at("ffn_w1"), cfg.d_model, cfg.d_ff, "ffn_w1");
        layer.ffn_b1 = vector_from_json(lj.at("ffn_b1"), cfg.d_ff, "ffn_b1");
        layer.ffn_w2 = matrix_from_json(lj.at("ffn_w2"), cfg.d_ff, cfg.d_model, "ffn_w2");
        layer.ffn_b2 = vector_from_json(lj.at("ffn_b2"), cfg.d_model, "ffn_b2");
        layer.ln1_gain = vector_from_json(lj.at("ln1_gain"), cfg.d_model, "ln1_gain");
        layer.ln1_bias = vector_from_json(lj.at("ln1_bias"), cfg.d_model, "ln1_bias");
        layer.ln2_gain = vector_from_json(lj.at("ln2_gain"), cfg.d_model, "ln2_gain");
        layer.ln2_bias = vector_from_json(lj.at("ln2_bias"), cfg.d_model, "ln2_bias");
        s.layers.push_back(std::move(layer));
    }

    const json& heads = j.at("heads");
    if (heads.contains("classification")) {
        ClassificationHeadT<double> head;
        head.w = matrix_from_json(heads.at("classification").at("w"), cfg.n_classes, cfg.d_model,
                                  "classification head");
        head.b = vector_from_json(heads.at("classification").at("b"), cfg.n_classes,
                                  "classification bias");
        s.classification_head = std::move(head);
    }
    if (heads.contains("regression")) {
        RegressionHeadT<double> head;
        head.w = vector_from_json(heads.at("regression").at("w"), cfg.d_model, "regression head");
        head.b = heads.at("regression").at("b").get<double>();
        s.regression_head = std::move(head);
    }
    if (heads.contains("lm")) {
        LmHeadT<double> head;
        head.w = matrix_from_json(heads.at("lm").at("w"), cfg.vocab_size, cfg.d_model, "lm head");
        head.b = vector_from_json(heads.at("lm").at("b"), cfg.vocab_size, "lm bias");
        s.lm_head = std::move(head);
    }
    if (!s.classification_head && !s.regression_head && !s.lm_head) {
        throw LoadError("model file: at least one head must be present");
    }
    return s;
}

} // namespace

std::string canonical_model_json(const ModelSnapshot& snapshot) {
    return body_to_json(snapshot).dump();
}

void save_model(const ModelSnapshot& snapshot, const std::string& path) {
    const std::string canonical = canonical_model_json(snapshot);
    json file = body_to_json(snapshot);
    file["sha256"] = sha256_hex(canonical);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot open for writing: " + path);
    out << file.dump(1) << "\n";
}

ModelSnapshot load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open model file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    json file;
    try {
        file = json::parse(buf.str());
    } catch (const json::exception& e) {
        throw LoadError(std::string("malformed model file: ") + e.what());
    }
    ModelSnapshot snapshot;
    std::string stored_hash;
    try {
        stored_hash = file.at("sha256").get<std::string>();
        snapshot = body_from_json(file);
    } catch (const json::exception& e) {
        throw LoadError(std::string("malformed model file: ") + e.what());
    }
    if (sha256_hex(canonical_model_json(snapshot)) != stored_hash) {
        throw LoadError("model file: integrity check failed (sha256 mismatch)");
    }
    return snapshot;
}

} // namespace nxl
