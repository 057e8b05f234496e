// Command-line front end: model/dataset generation, token attribution, and
// the faithfulness / alignment evaluation protocols.

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nxl/attribution.hpp"
#include "nxl/evaluation.hpp"
#include "nxl/fixtures.hpp"
#include "nxl/gradients.hpp"
#include "nxl/serialize.hpp"

using json = nlohmann::json;

namespace {

nxl::TaskKind parse_task(const std::string& s) {
    if (s == "classification") return nxl::TaskKind::classification;
    if (s == "regression") return nxl::TaskKind::regression;
    if (s == "masked_lm") return nxl::TaskKind::masked_lm;
    throw nxl::ProtocolError("unknown task: " + s);
}

int thread_cap() {
    const char* env = std::getenv("NXL_THREADS");
    if (env) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Shortest round-trip decimal, same formatting JSON output uses.
std::string num(double x) { return json(x).dump(); }

std::string run_config_hash(const json& cfg) { return nxl::sha256_hex(cfg.dump()); }

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw nxl::LoadError("cannot open for writing: " + path);
    out << contents;
}

struct GenModelArgs {
    std::string out;
    int layers = 1, heads = 2, d_model = 8, d_ff = 16;
    int vocab = 24, max_seq = 12, classes = 2;
    double ln_eps = 1e-5;
    bool cls_last = false;
    std::vector<std::string> head_kinds = {"cls"};
    std::uint64_t seed = 0;
    bool planted = false;
    int planted_token = nxl::kDefaultPlantedTokenId;
    int train_count = 64;
    int train_steps = 2000;
    double learning_rate = 0.5;
};

int cmd_gen_model(const GenModelArgs& a) {
    nxl::ModelConfig cfg;
    cfg.n_layers = a.layers;
    cfg.n_heads = a.heads;
    cfg.d_model = a.d_model;
    if (a.d_model % a.heads != 0) throw nxl::ShapeError("d_model must be divisible by heads");
    cfg.d_head = a.d_model / a.heads;
    cfg.d_ff = a.d_ff;
    cfg.vocab_size = a.vocab;
    cfg.max_seq_len = a.max_seq;
    cfg.n_classes = a.classes;
    cfg.ln_eps = a.ln_eps;
    cfg.cls_at_end = a.cls_last;

    nxl::HeadSelection heads{false, false, false};
    for (const std::string& h : a.head_kinds) {
        if (h == "cls") heads.classification = true;
        else if (h == "reg") heads.regression = true;
        else if (h == "lm") heads.lm = true;
        else if (h == "all") heads = {true, true, true};
        else throw nxl::ProtocolError("unknown head kind: " + h);
    }

    nxl::ModelSnapshot snap = nxl::generate_model(cfg, a.seed, heads);
    if (a.planted) {
        nxl::PlantedDataOptions data_opts;
        data_opts.count = a.train_count;
        data_opts.vocab_size = cfg.vocab_size;
        data_opts.planted_token = a.planted_token;
        data_opts.max_len = std::min(8, cfg.max_seq_len);
        data_opts.seed = a.seed + 1;
        const nxl::LabeledDataset train = nxl::generate_planted_dataset(data_opts);
        nxl::TrainOptions train_opts;
        train_opts.max_steps = a.train_steps;
        train_opts.learning_rate = a.learning_rate;
        train_opts.seed = a.seed;
        const nxl::TrainResult res = nxl::train_classifier(snap, train, train_opts);
        std::cerr << "planted fixture: " << res.steps_run << " steps, loss " << res.final_loss
                  << ", train accuracy " << res.final_accuracy << "\n";
    }
    nxl::save_model(snap, a.out);
    return 0;
}

struct GenDataArgs {
    std::string out;
    std::string kind = "planted";
    std::string task = "classification";
    int count = 200;
    int min_len = 5, max_len = 8;
    int vocab = 24;
    int planted_token = nxl::kDefaultPlantedTokenId;
    std::uint64_t seed = 0;
};

int cmd_gen_data(const GenDataArgs& a) {
    nxl::LabeledDataset ds;
    if (a.kind == "planted") {
        nxl::PlantedDataOptions opts;
        opts.count = a.count;
        opts.min_len = a.min_len;
        opts.max_len = a.max_len;
        opts.vocab_size = a.vocab;
        opts.planted_token = a.planted_token;
        opts.seed = a.seed;
        opts.task = parse_task(a.task);
        if (opts.task == nxl::TaskKind::masked_lm) {
            throw nxl::ProtocolError("planted datasets are classification or regression");
        }
        ds = nxl::generate_planted_dataset(opts);
    } else if (a.kind == "agreement") {
        nxl::AgreementDataOptions opts;
        opts.count = a.count;
        opts.min_len = a.min_len;
        opts.max_len = a.max_len;
        opts.vocab_size = a.vocab;
        opts.seed = a.seed;
        ds = nxl::generate_agreement_dataset(opts);
    } else {
        throw nxl::ProtocolError("unknown dataset kind: " + a.kind);
    }
    nxl::save_dataset(ds, a.out);
    return 0;
}

struct AttributeArgs {
    std::string model, data, out;
    std::string task = "classification";
    std::string method = "normxlogit";
    std::optional<int> target_label;
    std::optional<int> layer;
    int ig_steps = 50;
    std::string ig_baseline = "zero-token";
    std::uint64_t seed = 0;
};

nxl::BaselineSpec parse_baseline(const std::string& s) {
    nxl::BaselineSpec spec;
    if (s == "zero-token") {
        spec.kind = nxl::BaselineSpec::Kind::zero_token_keep_pos;
    } else if (s == "all-zero") {
        spec.kind = nxl::BaselineSpec::Kind::all_zero;
    } else {
        throw nxl::ProtocolError("unknown IG baseline: " + s);
    }
    return spec;
}

int cmd_attribute(const AttributeArgs& a) {
    const nxl::ModelSnapshot snap = nxl::load_model(a.model);
    const nxl::TaskKind task = parse_task(a.task);
    const nxl::LabeledDataset ds = nxl::load_dataset(a.data, task);
    ds.validate(snap.config);

    std::vector<nxl::AttributionMethod> methods;
    if (a.method == "all") {
        methods = {nxl::AttributionMethod::l2norm,
                   nxl::AttributionMethod::logat,
                   nxl::AttributionMethod::normxlogit,
                   nxl::AttributionMethod::grad_norm,
                   nxl::AttributionMethod::grad_x_input,
                   nxl::AttributionMethod::integrated_gradients,
                   nxl::AttributionMethod::random};
    } else {
        methods = {nxl::method_from_name(a.method)};
    }

    const json run_cfg = {{"data", a.data},        {"ig_baseline", a.ig_baseline},
                          {"ig_steps", a.ig_steps}, {"method", a.method},
                          {"model", a.model},       {"seed", a.seed},
                          {"task", a.task}};
    const std::string cfg_hash = run_config_hash(run_cfg);

    struct Job {
        std::size_t instance;
        nxl::AttributionMethod method;
    };
    std::vector<Job> jobs;
    for (std::size_t i = 0; i < ds.instances.size(); ++i) {
        for (nxl::AttributionMethod m : methods) jobs.push_back({i, m});
    }
    std::vector<std::string> lines(jobs.size());

    auto worker = [&](std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) {
            const Job& job = jobs[k];
            const nxl::Instance& inst = ds.instances[job.instance];
            json rec;
            rec["sequence_id"] = inst.id;
            rec["method"] = nxl::method_name(job.method);
            try {
                nxl::AttributionRequest req;
                req.method = job.method;
                req.task = task;
                req.target_label = a.target_label;
                req.layer = a.layer;
                req.ig_steps = a.ig_steps;
                req.ig_baseline = parse_baseline(a.ig_baseline);
                req.seed = a.seed;
                const nxl::AttributionResult res = nxl::attribute(snap, inst.sequence, req);
                rec["params"] = {{"config_hash", cfg_hash},
                                 {"ig_baseline", a.ig_baseline},
                                 {"ig_steps", a.ig_steps},
                                 {"task", a.task},
                                 {"tool_version", nxl::kToolVersion}};
                rec["seed"] = a.seed;
                rec["target_label"] = res.target_label;
                rec["layer"] = res.layer;
                rec["scores"] = res.scores;
                rec["signed"] = res.signed_scores;
            } catch (const nxl::Error& e) {
                // Incompatible method/task combinations are reported per
                // instance; the run continues.
                rec["error"] = e.what();
            }
            lines[k] = rec.dump();
        }
    };

    const int threads = std::min<int>(thread_cap(), static_cast<int>(jobs.size()));
    if (threads <= 1) {
        worker(0, jobs.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (jobs.size() + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            const std::size_t begin = t * chunk;
            const std::size_t end = std::min(jobs.size(), begin + chunk);
            if (begin < end) pool.emplace_back(worker, begin, end);
        }
        for (auto& th : pool) th.join();
    }

    std::ostringstream out;
    for (const std::string& line : lines) out << line << "\n";
    write_file(a.out, out.str());
    return 0;
}

struct FaithfulnessArgs {
    std::string model, data, out_json, out_csv;
    std::string task = "classification";
    std::string method = "normxlogit";
    std::string metric = "both"; // aopc | accuracy | both
    std::vector<double> ratios = {10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
    std::string perturbation = "mask";
    int mask_token = nxl::kMaskTokenId;
    std::optional<int> target_label;
    std::optional<int> layer;
    int ig_steps = 50;
    std::string ig_baseline = "zero-token";
    std::uint64_t seed = 0;
};

json faithfulness_report_json(const nxl::FaithfulnessReport& r) {
    json entries = json::array();
    for (std::size_t i = 0; i < r.ratios.size(); ++i) {
        entries.push_back(
            {{"ratio", r.ratios[i]}, {"skipped", r.skipped[i]}, {"value", r.values[i]}});
    }
    return {{"entries", entries},
            {"mean", r.mean},
            {"method", r.method},
            {"metric", r.metric},
            {"skipped_total", r.skipped_total}};
}

int cmd_faithfulness(const FaithfulnessArgs& a) {
    const nxl::ModelSnapshot snap = nxl::load_model(a.model);
    const nxl::TaskKind task = parse_task(a.task);
    const nxl::LabeledDataset ds = nxl::load_dataset(a.data, task);

    nxl::AttributionRequest req;
    req.method = nxl::method_from_name(a.method);
    req.task = task;
    req.target_label = a.target_label;
    req.layer = a.layer;
    req.ig_steps = a.ig_steps;
    req.ig_baseline = parse_baseline(a.ig_baseline);
    req.seed = a.seed;

    nxl::PerturbationSpec spec;
    spec.mode = a.perturbation == "delete" ? nxl::PerturbationSpec::Mode::del
                                           : nxl::PerturbationSpec::Mode::mask;
    if (a.perturbation != "mask" && a.perturbation != "delete") {
        throw nxl::ProtocolError("perturbation must be mask or delete");
    }
    spec.ratios = a.ratios;
    spec.mask_token_id = a.mask_token;

    const json run_cfg = {{"data", a.data},
                          {"mask_token", a.mask_token},
                          {"method", a.method},
                          {"metric", a.metric},
                          {"model", a.model},
                          {"perturbation", a.perturbation},
                          {"ratios", a.ratios},
                          {"seed", a.seed},
                          {"task", a.task}};

    json out;
    out["config_hash"] = run_config_hash(run_cfg);
    out["seed"] = a.seed;
    out["tool_version"] = nxl::kToolVersion;
    std::vector<nxl::FaithfulnessReport> reports;
    if (a.metric == "aopc" || a.metric == "both") {
        reports.push_back(nxl::aopc(snap, ds, req, spec));
    }
    if (a.metric == "accuracy" || a.metric == "both") {
        reports.push_back(nxl::accuracy_under_perturbation(snap, ds, req, spec));
    }
    if (reports.empty()) throw nxl::ProtocolError("metric must be aopc, accuracy, or both");
    json jr = json::array();
    for (const auto& r : reports) jr.push_back(faithfulness_report_json(r));
    out["reports"] = jr;
    write_file(a.out_json, out.dump(1) + "\n");

    // CSV columns: method,metric,ratio,value,skipped
    std::ostringstream csv;
    csv << "method,metric,ratio,value,skipped\n";
    for (const auto& r : reports) {
        for (std::size_t i = 0; i < r.ratios.size(); ++i) {
            csv << r.method << "," << r.metric << "," << num(r.ratios[i]) << ","
                << num(r.values[i]) << "," << r.skipped[i] << "\n";
        }
    }
    write_file(a.out_csv, csv.str());
    return 0;
}

struct AlignArgs {
    std::string model, data, out_json, out_csv;
    std::vector<std::string> variants = {"l2norm", "logat_target", "logat_foil", "normxlogit"};
    std::optional<int> arbitrary_token;
    std::uint64_t seed = 0;
    std::vector<double> debug_scores;
    std::vector<int> debug_evidence;
};

int cmd_align(const AlignArgs& a) {
    if (!a.debug_scores.empty() || !a.debug_evidence.empty()) {
        // Metric kernels on externally supplied vectors; prints dot and AP.
        nxl::AttributionResult res;
        res.scores = a.debug_scores;
        res.method = "debug";
        nxl::EvidenceVector ev{a.debug_evidence};
        std::cout << "dot=" << num(nxl::dot_alignment(ev, res))
                  << " ap=" << num(nxl::average_precision(ev, res)) << "\n";
        return 0;
    }
    if (a.model.empty() || a.data.empty() || a.out_json.empty() || a.out_csv.empty()) {
        throw nxl::ProtocolError("align needs --model, --data, --out-json, and --out-csv");
    }
    const nxl::ModelSnapshot snap = nxl::load_model(a.model);
    const nxl::LabeledDataset ds = nxl::load_dataset(a.data, nxl::TaskKind::masked_lm);

    std::vector<std::string> variants = a.variants;
    if (a.arbitrary_token &&
        std::find(variants.begin(), variants.end(), "logat_arbitrary") == variants.end()) {
        variants.push_back("logat_arbitrary");
    }
    const nxl::AlignmentReport report =
        nxl::per_layer_alignment(snap, ds, variants, a.arbitrary_token);

    const json run_cfg = {{"arbitrary_token", a.arbitrary_token ? json(*a.arbitrary_token) : json()},
                          {"data", a.data},
                          {"model", a.model},
                          {"seed", a.seed},
                          {"variants", variants}};
    json rows = json::array();
    for (const auto& row : report.rows) {
        rows.push_back({{"layer", row.layer},
                        {"mean_ap", row.mean_ap},
                        {"mean_dot", row.mean_dot},
                        {"variant", row.variant}});
    }
    json out;
    out["config_hash"] = run_config_hash(run_cfg);
    out["rows"] = rows;
    out["seed"] = a.seed;
    out["tool_version"] = nxl::kToolVersion;
    write_file(a.out_json, out.dump(1) + "\n");

    // CSV columns: variant,layer,mean_dot,mean_ap
    std::ostringstream csv;
    csv << "variant,layer,mean_dot,mean_ap\n";
    for (const auto& row : report.rows) {
        csv << row.variant << "," << row.layer << "," << num(row.mean_dot) << ","
            << num(row.mean_ap) << "\n";
    }
    write_file(a.out_csv, csv.str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"NormXLogit token attribution toolkit"};
    app.require_subcommand(1);

    GenModelArgs gm;
    CLI::App* gen_model = app.add_subcommand("gen-model", "Generate (and optionally train) a model");
    gen_model->add_option("--out", gm.out)->required();
    gen_model->add_option("--layers", gm.layers);
    gen_model->add_option("--heads", gm.heads);
    gen_model->add_option("--d-model", gm.d_model);
    gen_model->add_option("--d-ff", gm.d_ff);
    gen_model->add_option("--vocab", gm.vocab);
    gen_model->add_option("--max-seq", gm.max_seq);
    gen_model->add_option("--classes", gm.classes);
    gen_model->add_option("--ln-eps", gm.ln_eps);
    gen_model->add_flag("--cls-last", gm.cls_last);
    gen_model->add_option("--head", gm.head_kinds, "cls, reg, lm, or all (repeatable)");
    gen_model->add_option("--seed", gm.seed);
    gen_model->add_flag("--planted", gm.planted);
    gen_model->add_option("--planted-token", gm.planted_token);
    gen_model->add_option("--train-count", gm.train_count);
    gen_model->add_option("--train-steps", gm.train_steps);
    gen_model->add_option("--lr", gm.learning_rate);

    GenDataArgs gd;
    CLI::App* gen_data = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    gen_data->add_option("--out", gd.out)->required();
    gen_data->add_option("--kind", gd.kind, "planted or agreement");
    gen_data->add_option("--task", gd.task);
    gen_data->add_option("--count", gd.count);
    gen_data->add_option("--min-len", gd.min_len);
    gen_data->add_option("--max-len", gd.max_len);
    gen_data->add_option("--vocab", gd.vocab);
    gen_data->add_option("--planted-token", gd.planted_token);
    gen_data->add_option("--seed", gd.seed);

    AttributeArgs at;
    CLI::App* attribute = app.add_subcommand("attribute", "Per-token attribution records");
    attribute->add_option("--model", at.model)->required();
    attribute->add_option("--data", at.data)->required();
    attribute->add_option("--out", at.out)->required();
    attribute->add_option("--task", at.task);
    attribute->add_option("--method", at.method, "method name or 'all'");
    attribute->add_option("--target-label", at.target_label);
    attribute->add_option("--layer", at.layer);
    attribute->add_option("--ig-steps", at.ig_steps);
    attribute->add_option("--ig-baseline", at.ig_baseline, "zero-token or all-zero");
    attribute->add_option("--seed", at.seed);

    FaithfulnessArgs fa;
    CLI::App* faith = app.add_subcommand("faithfulness", "AOPC / accuracy perturbation curves");
    faith->add_option("--model", fa.model)->required();
    faith->add_option("--data", fa.data)->required();
    faith->add_option("--out-json", fa.out_json)->required();
    faith->add_option("--out-csv", fa.out_csv)->required();
    faith->add_option("--task", fa.task);
    faith->add_option("--method", fa.method);
    faith->add_option("--metric", fa.metric, "aopc, accuracy, or both");
    faith->add_option("--ratios", fa.ratios)->delimiter(',');
    faith->add_option("--perturbation", fa.perturbation, "mask or delete");
    faith->add_option("--mask-token", fa.mask_token);
    faith->add_option("--target-label", fa.target_label);
    faith->add_option("--layer", fa.layer);
    faith->add_option("--ig-steps", fa.ig_steps);
    faith->add_option("--ig-baseline", fa.ig_baseline);
    faith->add_option("--seed", fa.seed);

    AlignArgs al;
    CLI::App* align = app.add_subcommand("align", "Per-layer evidence alignment");
    align->add_option("--model", al.model);
    align->add_option("--data", al.data);
    align->add_option("--out-json", al.out_json);
    align->add_option("--out-csv", al.out_csv);
    align->add_option("--variants", al.variants)->delimiter(',');
    align->add_option("--arbitrary-token", al.arbitrary_token);
    align->add_option("--seed", al.seed);
    align->add_option("--debug-scores", al.debug_scores, "bypass the model: raw score vector")
        ->delimiter(',');
    align->add_option("--debug-evidence", al.debug_evidence, "bypass the model: evidence bits")
        ->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return static_cast<int>(nxl::ErrorCategory::config);
    }

    try {
        if (gen_model->parsed()) return cmd_gen_model(gm);
        if (gen_data->parsed()) return cmd_gen_data(gd);
        if (attribute->parsed()) return cmd_attribute(at);
        if (faith->parsed()) return cmd_faithfulness(fa);
        if (align->parsed()) return cmd_align(al);
    } catch (const nxl::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.category());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
