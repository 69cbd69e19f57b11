#include "pxe/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"

#include "pxe/error.hpp"
#include "pxe/eval.hpp"
#include "pxe/io.hpp"
#include "pxe/linalg.hpp"
#include "pxe/losses.hpp"
#include "pxe/rng.hpp"
#include "pxe/sampling.hpp"
#include "pxe/trainer.hpp"

namespace pxe {
namespace {

namespace fs = std::filesystem;

// Stream tags keep the model-init, proxy-init, and evaluation RNG streams
// disjoint from the training stream under one user-facing seed.
constexpr std::uint64_t kModelStream = 0x6d6f64656cULL;
constexpr std::uint64_t kProxyStream = 0x70726f7879ULL;
constexpr std::uint64_t kEvalStream = 0x6576616cULL;
constexpr std::uint64_t kControlStream = 0x636e74726cULL;

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

void ensure_parent_dir(const std::string& file) {
    const fs::path parent = fs::path(file).parent_path();
    if (parent.empty()) return;
    std::error_code ec;
    fs::create_directories(parent, ec);
    if (ec) throw IoError("cannot create directory " + parent.string() + ": " + ec.message());
}

std::string join_path(const std::string& dir, const char* name) {
    return (fs::path(dir) / name).string();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << text;
    out.flush();
    if (!out) throw IoError("write failed: " + path);
}

const char* bool_str(bool v) { return v ? "true" : "false"; }

/// Applies key=value pairs from a config file to every option of cmd the
/// user did not set explicitly, so command-line flags always win. Keys are
/// the primary long option names; empty values are treated as unset.
void merge_config(CLI::App* cmd, const std::string& path) {
    if (path.empty()) return;
    for (const auto& [key, value] : read_key_values(path)) {
        if (key == "config" || value.empty()) continue;
        CLI::Option* opt = cmd->get_option_no_throw("--" + key);
        if (opt == nullptr || !opt->check_lname(key))
            throw InvalidParamsError("config: unknown key '" + key + "'");
        if (opt->count() > 0) continue;
        opt->add_result(value);
        opt->run_callback();
    }
}

void require_set(const std::string& value, const char* flag) {
    if (value.empty()) throw InvalidParamsError(std::string(flag) + " is required");
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

std::size_t parse_size(const std::string& tok, const char* what) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
        throw InvalidParamsError(std::string(what) + ": bad integer '" + tok + "'");
    return v;
}

double parse_real(const std::string& tok, const char* what) {
    if (tok.empty()) throw InvalidParamsError(std::string(what) + ": empty value");
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size() || !std::isfinite(v))
        throw InvalidParamsError(std::string(what) + ": bad number '" + tok + "'");
    return v;
}

/// Comma-separated K list: positive integers, returned sorted and deduped.
std::vector<std::size_t> parse_ks(const std::string& s) {
    std::vector<std::size_t> ks;
    for (const auto& tok : split_csv(s)) {
        const std::size_t k = parse_size(tok, "--ks");
        if (k == 0) throw InvalidParamsError("--ks: K must be >= 1");
        ks.push_back(k);
    }
    std::sort(ks.begin(), ks.end());
    ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
    if (ks.empty()) throw InvalidParamsError("--ks: empty K list");
    return ks;
}

std::size_t distinct_count(const std::vector<std::size_t>& labels) {
    return std::set<std::size_t>(labels.begin(), labels.end()).size();
}

std::string sanitize_note(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '\n' || c == '\r') c = ' ';
    return s;
}

// ---------------------------------------------------------------- options

struct GenOptions {
    std::size_t classes = 10;
    std::size_t per_class = 100;
    std::size_t dim = 64;
    double center_scale = 5.0;
    double noise_sigma = 0.5;
    std::uint64_t seed = 0;
    std::string out;
};

struct TrainOptions {
    std::string data;
    std::string out = ".";
    std::uint64_t seed = 0;
    std::string trunk = "identity";
    std::size_t hidden_dim = 0;
    std::size_t embed_dim = 32;
    bool layer_norm = true;
    double ln_epsilon = 1e-5;
    std::string loss = "norm_softmax";
    double sigma = 0.05;
    double scale = 30.0;
    double margin = 0.35;
    double subsample = 1.0;
    std::size_t epochs = 30;
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double gamma = 0.1;
    std::size_t step_epoch = 15;
    std::size_t warmstart = 1;
    bool balanced = true;
    std::size_t classes_per_batch = 3;
    std::size_t samples_per_class = 25;
    std::size_t batch_size = 75;
};

struct EmbedOptions {
    std::string model;
    std::string data;
    std::string out = ".";
    std::uint64_t seed = 0;
};

struct EvalOptions {
    std::string embeddings;
    std::string labels;
    std::string out = ".";
    std::string ks = "1,2,4,8";
    bool binary = false;
    std::size_t nmi_k = 0;
    std::string nmi_norm = "arithmetic";
    std::uint64_t seed = 0;
};

struct SweepOptions {
    TrainOptions train;
    std::string axis;
    std::string values;
    std::string ks = "1";
};

struct GradcheckOptions {
    std::uint64_t seed = 0;
    std::string loss;
    bool inject_sign_flip = false;
    std::string out;
};

LossConfig to_loss_config(const TrainOptions& o) {
    LossConfig lc;
    lc.variant = loss_variant_from_string(o.loss);
    lc.temperature = o.sigma;
    lc.scale = o.scale;
    lc.margin = o.margin;
    return lc;
}

TrainConfig to_train_config(const TrainOptions& o) {
    TrainConfig cfg;
    cfg.epochs = o.epochs;
    cfg.class_balanced = o.balanced;
    cfg.batch.classes_per_batch = o.classes_per_batch;
    cfg.batch.samples_per_class = o.samples_per_class;
    cfg.sequential_batch_size = o.batch_size;
    cfg.lr = o.lr;
    cfg.momentum = o.momentum;
    cfg.weight_decay = o.weight_decay;
    cfg.lr_step_epoch = o.step_epoch;
    cfg.lr_gamma = o.gamma;
    cfg.loss = to_loss_config(o);
    cfg.subsample_ratio = o.subsample;
    cfg.warmstart_epochs = o.warmstart;
    cfg.seed = o.seed;
    return cfg;
}

/// Fresh model + proxies for a training run. Init draws come from streams
/// derived off the user seed so they never alias the batch-sampling stream.
std::pair<EmbeddingModel, ProxyMatrix> build_model(const TrainOptions& o,
                                                   std::size_t feature_dim,
                                                   std::size_t class_count) {
    const TrunkKind kind = trunk_kind_from_string(o.trunk);
    std::size_t hidden = o.hidden_dim == 0 ? feature_dim : o.hidden_dim;
    if (kind == TrunkKind::kIdentity) hidden = feature_dim;
    SeededRng model_rng(derive_seed(o.seed, kModelStream));
    EmbeddingModel model = EmbeddingModel::create(kind, feature_dim, hidden, o.embed_dim,
                                                  o.layer_norm, o.ln_epsilon, model_rng);
    SeededRng proxy_rng(derive_seed(o.seed, kProxyStream));
    ProxyMatrix proxies = ProxyMatrix::random_unit(class_count, o.embed_dim, proxy_rng);
    return {std::move(model), std::move(proxies)};
}

// ------------------------------------------------- resolved-config dumps

KeyValues gen_kv(const GenOptions& o) {
    return {{"classes", std::to_string(o.classes)},
            {"per-class", std::to_string(o.per_class)},
            {"dim", std::to_string(o.dim)},
            {"center-scale", format_double(o.center_scale)},
            {"noise-sigma", format_double(o.noise_sigma)},
            {"seed", std::to_string(o.seed)},
            {"out", o.out}};
}

KeyValues train_kv(const TrainOptions& o) {
    return {{"data", o.data},
            {"out", o.out},
            {"seed", std::to_string(o.seed)},
            {"trunk", o.trunk},
            {"hidden-dim", std::to_string(o.hidden_dim)},
            {"embed-dim", std::to_string(o.embed_dim)},
            {"layer-norm", bool_str(o.layer_norm)},
            {"ln-epsilon", format_double(o.ln_epsilon)},
            {"loss", o.loss},
            {"sigma", format_double(o.sigma)},
            {"scale", format_double(o.scale)},
            {"margin", format_double(o.margin)},
            {"subsample", format_double(o.subsample)},
            {"epochs", std::to_string(o.epochs)},
            {"lr", format_double(o.lr)},
            {"momentum", format_double(o.momentum)},
            {"weight-decay", format_double(o.weight_decay)},
            {"gamma", format_double(o.gamma)},
            {"step-epoch", std::to_string(o.step_epoch)},
            {"warmstart", std::to_string(o.warmstart)},
            {"balanced", bool_str(o.balanced)},
            {"classes-per-batch", std::to_string(o.classes_per_batch)},
            {"samples-per-class", std::to_string(o.samples_per_class)},
            {"batch-size", std::to_string(o.batch_size)}};
}

KeyValues embed_kv(const EmbedOptions& o) {
    return {{"model", o.model}, {"data", o.data}, {"out", o.out},
            {"seed", std::to_string(o.seed)}};
}

KeyValues eval_kv(const EvalOptions& o, std::size_t resolved_nmi_k) {
    return {{"embeddings", o.embeddings},
            {"labels", o.labels},
            {"out", o.out},
            {"ks", o.ks},
            {"binary", bool_str(o.binary)},
            {"nmi-k", std::to_string(resolved_nmi_k)},
            {"nmi-norm", o.nmi_norm},
            {"seed", std::to_string(o.seed)}};
}

KeyValues sweep_kv(const SweepOptions& o) {
    KeyValues kv = train_kv(o.train);
    kv.emplace_back("axis", o.axis);
    kv.emplace_back("values", o.values);
    kv.emplace_back("ks", o.ks);
    return kv;
}

KeyValues gradcheck_kv(const GradcheckOptions& o) {
    return {{"seed", std::to_string(o.seed)},
            {"loss", o.loss},
            {"inject-sign-flip", bool_str(o.inject_sign_flip)},
            {"out", o.out}};
}

// ---------------------------------------------------------------- verbs

int do_gen(const GenOptions& o) {
    require_set(o.out, "--out");
    SeededRng rng(o.seed);
    const Dataset ds = generate_synthetic(o.classes, o.per_class, o.dim, o.center_scale,
                                          o.noise_sigma, rng);
    ensure_parent_dir(o.out);
    write_dataset_csv(o.out, ds, true);
    write_key_values(o.out + ".config", gen_kv(o));
    std::printf("N=%zu F=%zu classes=%zu\n", ds.size(), ds.feature_dim(), ds.class_count);
    std::printf("wrote %s\n", o.out.c_str());
    return 0;
}

int do_train(const TrainOptions& o) {
    require_set(o.data, "--data");
    const CsvDataset csv = read_dataset_csv(o.data);
    const Dataset& ds = csv.dataset;
    auto [model, proxies] = build_model(o, ds.feature_dim(), ds.class_count);
    const TrainResult result = fit(ds, std::move(model), std::move(proxies), to_train_config(o));

    ensure_dir(o.out);
    const std::string model_path = join_path(o.out, "model.pxe");
    const std::string history_path = join_path(o.out, "history.csv");
    save_checkpoint(model_path, result.model, result.proxies);
    write_history_csv(history_path, result.history);
    write_key_values(join_path(o.out, "train_config.txt"), train_kv(o));

    const double final_loss =
        result.history.epochs.empty() ? result.history.initial_loss
                                      : result.history.epochs.back().mean_loss;
    std::printf("N=%zu F=%zu classes=%zu\n", ds.size(), ds.feature_dim(), ds.class_count);
    std::printf("initial_loss=%s\n", format_double(result.history.initial_loss).c_str());
    std::printf("final_loss=%s\n", format_double(final_loss).c_str());
    std::printf("wrote %s\n", model_path.c_str());
    std::printf("wrote %s\n", history_path.c_str());
    return 0;
}

int do_embed(const EmbedOptions& o) {
    require_set(o.model, "--model");
    require_set(o.data, "--data");
    const Checkpoint ck = load_checkpoint(o.model);
    const CsvDataset csv = read_dataset_csv(o.data);
    if (csv.dataset.feature_dim() != ck.model.feature_dim())
        throw ShapeMismatchError("embed: dataset feature dim " +
                                 std::to_string(csv.dataset.feature_dim()) +
                                 " != model feature dim " +
                                 std::to_string(ck.model.feature_dim()));
    const Matrix embeddings = embed_all(ck.model, csv.dataset.features);

    ensure_dir(o.out);
    const std::string emb_path = join_path(o.out, "embeddings.emb");
    const std::string labels_path = join_path(o.out, "labels.txt");
    write_embeddings(emb_path, embeddings);
    write_labels(labels_path, csv.dataset.labels);
    write_key_values(join_path(o.out, "embed_config.txt"), embed_kv(o));

    std::printf("N=%zu D=%zu\n", embeddings.rows, embeddings.cols);
    std::printf("wrote %s\n", emb_path.c_str());
    std::printf("wrote %s\n", labels_path.c_str());
    return 0;
}

std::string report_lines(const EvalReport& rep) {
    const char* mode = rep.mode == EvalMode::kFloat ? "float" : "binary";
    std::string out;
    for (const auto& [k, r] : rep.recall_at)
        out += std::string(mode) + " recall@" + std::to_string(k) + " " + format_double(r) + "\n";
    out += std::string(mode) + " nmi " + format_double(rep.nmi) + "\n";
    return out;
}

std::string report_csv_rows(const EvalReport& rep) {
    const char* mode = rep.mode == EvalMode::kFloat ? "float" : "binary";
    std::string out;
    for (const auto& [k, r] : rep.recall_at)
        out += std::string(mode) + ",recall@" + std::to_string(k) + "," + format_double(r) + "\n";
    out += std::string(mode) + ",nmi," + format_double(rep.nmi) + "\n";
    return out;
}

int do_eval(const EvalOptions& o) {
    require_set(o.embeddings, "--embeddings");
    require_set(o.labels, "--labels");
    EmbeddingSet set;
    set.embeddings = read_embeddings(o.embeddings);
    set.labels = read_labels(o.labels);
    set.validate();

    const std::vector<std::size_t> ks = parse_ks(o.ks);
    const std::size_t nmi_k = o.nmi_k != 0 ? o.nmi_k : distinct_count(set.labels);
    const NmiNorm norm =
        o.nmi_norm == "geometric" ? NmiNorm::kGeometric : NmiNorm::kArithmetic;
    SeededRng rng(o.seed);
    const EvalOutcome outcome = evaluate(set, ks, o.binary, nmi_k, rng, norm);

    ensure_dir(o.out);
    std::string table = report_lines(outcome.float_report);
    std::string csv = "mode,metric,value\n" + report_csv_rows(outcome.float_report);
    if (outcome.binary_report) {
        table += report_lines(*outcome.binary_report);
        csv += report_csv_rows(*outcome.binary_report);
    }
    const std::string report_path = join_path(o.out, "report.csv");
    write_text_file(report_path, csv);
    if (o.binary) write_binary_codes(join_path(o.out, "codes.bin"), binarize(set));
    write_key_values(join_path(o.out, "eval_config.txt"), eval_kv(o, nmi_k));

    std::fputs(table.c_str(), stdout);
    std::printf("wrote %s\n", report_path.c_str());
    return 0;
}

int do_sweep(const SweepOptions& o) {
    require_set(o.train.data, "--data");
    require_set(o.axis, "--axis");
    require_set(o.values, "--values");
    const CsvDataset csv = read_dataset_csv(o.train.data);
    const Dataset& ds = csv.dataset;
    const std::vector<std::size_t> ks = parse_ks(o.ks);
    if (o.axis != "dim" && o.axis != "subsample" && o.axis != "samples-per-class")
        throw InvalidParamsError("sweep: unknown axis " + o.axis);

    const std::vector<std::string> raw_values = split_csv(o.values);
    if (raw_values.empty() || (raw_values.size() == 1 && raw_values[0].empty()))
        throw InvalidParamsError("sweep: empty value list");

    std::string header = "value,status";
    for (std::size_t k : ks) header += ",r_at_" + std::to_string(k);
    header += ",nmi";
    for (std::size_t k : ks) header += ",bin_r_at_" + std::to_string(k);
    header += ",bin_nmi,seconds,note\n";

    std::string rows;
    std::printf("%s", header.c_str());
    for (std::size_t i = 0; i < raw_values.size(); ++i) {
        TrainOptions po = o.train;
        po.seed = derive_seed(o.train.seed, i);
        std::string value_str;
        if (o.axis == "dim") {
            const std::size_t v = parse_size(raw_values[i], "sweep value");
            po.embed_dim = v;
            value_str = std::to_string(v);
        } else if (o.axis == "subsample") {
            const double v = parse_real(raw_values[i], "sweep value");
            po.subsample = v;
            value_str = format_double(v);
        } else {
            const std::size_t v = parse_size(raw_values[i], "sweep value");
            if (v == 0) throw InvalidParamsError("sweep: samples-per-class must be >= 1");
            po.samples_per_class = v;
            po.classes_per_batch = std::max<std::size_t>(1, o.train.batch_size / v);
            value_str = std::to_string(v);
        }

        const auto t0 = std::chrono::steady_clock::now();
        std::string row = value_str;
        try {
            auto [model, proxies] = build_model(po, ds.feature_dim(), ds.class_count);
            const TrainResult result =
                fit(ds, std::move(model), std::move(proxies), to_train_config(po));
            EmbeddingSet set;
            set.embeddings = embed_all(result.model, ds.features);
            set.labels = ds.labels;
            SeededRng eval_rng(derive_seed(po.seed, kEvalStream));
            const EvalOutcome outcome = evaluate(set, ks, true, ds.class_count, eval_rng);
            const double seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

            row += ",ok";
            for (std::size_t k : ks) row += "," + format_double(outcome.float_report.recall_at.at(k));
            row += "," + format_double(outcome.float_report.nmi);
            for (std::size_t k : ks)
                row += "," + format_double(outcome.binary_report->recall_at.at(k));
            row += "," + format_double(outcome.binary_report->nmi);
            char sec[32];
            std::snprintf(sec, sizeof sec, "%.3f", seconds);
            row += "," + std::string(sec) + ",\n";
        } catch (const std::exception& e) {
            const double seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            row += ",error";
            for (std::size_t k = 0; k < 2 * ks.size() + 2; ++k) row += ",";
            char sec[32];
            std::snprintf(sec, sizeof sec, "%.3f", seconds);
            row += "," + std::string(sec) + "," + sanitize_note(e.what()) + "\n";
        }
        std::printf("%s", row.c_str());
        rows += row;
    }

    ensure_dir(o.train.out);
    const std::string sweep_path = join_path(o.train.out, "sweep.csv");
    write_text_file(sweep_path, header + rows);
    write_key_values(join_path(o.train.out, "sweep_config.txt"), sweep_kv(o));
    std::printf("wrote %s\n", sweep_path.c_str());
    return 0;
}

int do_gradcheck(const GradcheckOptions& o) {
    struct Arm {
        const char* name;
        LossVariant variant;
        bool subsampled;
    };
    const Arm arms[] = {{"nca", LossVariant::kNca, false},
                        {"norm_softmax", LossVariant::kNormSoftmax, false},
                        {"lmcl", LossVariant::kLmcl, false},
                        {"subsampled", LossVariant::kNormSoftmax, true}};

    const std::size_t feature_dim = 6, hidden_dim = 5, embed_dim = 4;
    const std::size_t class_count = 6, batch = 8;
    const double h = 1e-5, tol = 1e-5;

    std::string report;
    auto emit = [&report](const std::string& line) {
        report += line + "\n";
        std::printf("%s\n", line.c_str());
    };

    bool all_pass = true;
    bool matched = false;
    for (std::size_t a = 0; a < 4; ++a) {
        if (!o.loss.empty() && o.loss != arms[a].name) continue;
        matched = true;
        for (int ln = 1; ln >= 0; --ln) {
            SeededRng rng(derive_seed(o.seed, a * 2 + static_cast<std::size_t>(ln)));
            EmbeddingModel model =
                EmbeddingModel::create(TrunkKind::kAffineTanh, feature_dim, hidden_dim,
                                       embed_dim, ln != 0, 1e-5, rng);
            ProxyMatrix proxies = ProxyMatrix::random_unit(class_count, embed_dim, rng);
            Matrix features(batch, feature_dim);
            for (auto& v : features.data) v = rng.normal();
            std::vector<std::size_t> labels(batch);
            for (auto& l : labels) l = rng.uniform_index(class_count);

            LossConfig lc;
            lc.variant = arms[a].variant;
            std::vector<std::size_t> active;
            const std::vector<std::size_t>* active_ptr = nullptr;
            if (arms[a].subsampled) {
                active = subsample_classes(labels, class_count, 0.5, rng);
                active_ptr = &active;
            }

            GradCheckWorst worst;
            const double err = grad_check(model, proxies, features, labels, lc, h,
                                          active_ptr, 200, &worst);
            const bool pass = err < tol;
            all_pass = all_pass && pass;
            char line[160];
            std::snprintf(line, sizeof line, "%-17s ln=%-3s worst_rel_err=%.3e %s",
                          arms[a].name, ln != 0 ? "on" : "off", err, pass ? "PASS" : "FAIL");
            emit(line);
            if (!pass) {
                std::snprintf(line, sizeof line,
                              "  worst coordinate: %s[%zu] analytic=%.9e numeric=%.9e",
                              worst.tensor.c_str(), worst.index, worst.analytic,
                              worst.numeric);
                emit(line);
            }
        }
    }
    if (!matched)
        throw InvalidParamsError("gradcheck: unknown --loss filter '" + o.loss + "'");

    if (o.inject_sign_flip) {
        // Negative control: flip the sign of one analytic gradient coordinate
        // and confirm the finite-difference comparison flags it.
        SeededRng rng(derive_seed(o.seed, kControlStream));
        const std::size_t dim = 8, classes = 5;
        const ProxyMatrix proxies = ProxyMatrix::random_unit(classes, dim, rng);
        Vector raw(dim);
        for (auto& v : raw) v = rng.normal();
        const Vector x = l2_normalize(raw).first;
        LossConfig lc;
        LossResult res = single_loss(x, 1, proxies, lc);
        std::size_t flip = 0;
        for (std::size_t i = 1; i < dim; ++i)
            if (std::fabs(res.grad_embedding[i]) > std::fabs(res.grad_embedding[flip])) flip = i;
        res.grad_embedding[flip] = -res.grad_embedding[flip];

        double err = 0.0;
        std::size_t worst_i = 0;
        double worst_num = 0.0, worst_ana = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            auto probe = [&](double t) {
                Vector v = x;
                v[i] += t;
                return single_loss(l2_normalize(v).first, 1, proxies, lc).loss;
            };
            const double numeric = (probe(h) - probe(-h)) / (2.0 * h);
            const double analytic = res.grad_embedding[i];
            const double denom = std::max({1.0, std::fabs(numeric), std::fabs(analytic)});
            const double e = std::fabs(numeric - analytic) / denom;
            if (e > err) {
                err = e;
                worst_i = i;
                worst_num = numeric;
                worst_ana = analytic;
            }
        }
        const bool pass = err < tol;
        all_pass = all_pass && pass;
        char line[160];
        std::snprintf(line, sizeof line, "%-17s ln=n/a worst_rel_err=%.3e %s",
                      "sign_flip_control", err, pass ? "PASS" : "FAIL");
        emit(line);
        std::snprintf(line, sizeof line,
                      "  worst coordinate: embedding[%zu] analytic=%.9e numeric=%.9e",
                      worst_i, worst_ana, worst_num);
        emit(line);
    }

    emit(all_pass ? "GRADCHECK PASS" : "GRADCHECK FAIL");

    if (!o.out.empty()) {
        ensure_dir(o.out);
        write_text_file(join_path(o.out, "gradcheck_report.txt"), report);
        write_key_values(join_path(o.out, "gradcheck_config.txt"), gradcheck_kv(o));
    }
    return all_pass ? 0 : 1;
}

// ----------------------------------------------------------- CLI wiring

void add_train_options(CLI::App* cmd, TrainOptions& o) {
    cmd->add_option("--data", o.data, "dataset CSV");
    cmd->add_option("-o,--out", o.out, "output directory");
    cmd->add_option("--seed", o.seed, "RNG seed");
    cmd->add_option("--trunk", o.trunk, "trunk architecture")
        ->check(CLI::IsMember({"identity", "affine_tanh"}));
    cmd->add_option("--hidden-dim", o.hidden_dim, "affine_tanh trunk width (0 = feature dim)");
    cmd->add_option("--embed-dim", o.embed_dim, "embedding dimension");
    cmd->add_flag("--layer-norm,!--no-layer-norm", o.layer_norm,
                  "layer-normalize trunk features (default on)");
    cmd->add_option("--ln-epsilon", o.ln_epsilon, "layer norm epsilon");
    cmd->add_option("--loss", o.loss, "loss variant")
        ->check(CLI::IsMember({"nca", "norm_softmax", "lmcl"}));
    cmd->add_option("--sigma", o.sigma, "softmax temperature");
    cmd->add_option("--scale", o.scale, "lmcl scale s");
    cmd->add_option("--margin", o.margin, "lmcl margin m");
    cmd->add_option("--subsample", o.subsample, "active-class ratio per batch (norm_softmax)");
    cmd->add_option("--epochs", o.epochs, "training epochs");
    cmd->add_option("--lr", o.lr, "learning rate");
    cmd->add_option("--momentum", o.momentum, "SGD momentum");
    cmd->add_option("--weight-decay", o.weight_decay, "L2 weight decay");
    cmd->add_option("--gamma", o.gamma, "lr decay factor applied at --step-epoch");
    cmd->add_option("--step-epoch", o.step_epoch, "epoch index where lr decays");
    cmd->add_option("--warmstart", o.warmstart, "epochs with the trunk frozen");
    cmd->add_flag("--balanced,!--sequential", o.balanced,
                  "class-balanced batches (default) vs a shuffled permutation");
    cmd->add_option("--classes-per-batch", o.classes_per_batch, "classes per balanced batch");
    cmd->add_option("--samples-per-class", o.samples_per_class, "samples per class per batch");
    cmd->add_option("--batch-size", o.batch_size, "sequential batch size / sweep batch budget");
}

}  // namespace

int run_command(const std::vector<std::string>& args) {
    CLI::App app{"unit-sphere embedding training and retrieval evaluation"};
    app.name("pxe");
    app.require_subcommand(1);

    int rc = 0;

    GenOptions gen_opts;
    auto* gen = app.add_subcommand("gen", "generate a synthetic blob dataset CSV");
    gen->add_option("--classes", gen_opts.classes, "number of classes");
    gen->add_option("--per-class", gen_opts.per_class, "samples per class");
    gen->add_option("--dim", gen_opts.dim, "feature dimension");
    gen->add_option("--center-scale", gen_opts.center_scale, "class center radius");
    gen->add_option("--noise-sigma", gen_opts.noise_sigma, "per-coordinate noise stddev");
    gen->add_option("--seed", gen_opts.seed, "RNG seed");
    gen->add_option("-o,--out", gen_opts.out, "output CSV path");
    std::string gen_config;
    gen->add_option("--config", gen_config, "key=value file; explicit flags take precedence");
    gen->callback([&] {
        merge_config(gen, gen_config);
        rc = do_gen(gen_opts);
    });

    TrainOptions train_opts;
    auto* train = app.add_subcommand("train", "train an embedding model on a dataset CSV");
    add_train_options(train, train_opts);
    std::string train_config;
    train->add_option("--config", train_config, "key=value file; explicit flags take precedence");
    train->callback([&] {
        merge_config(train, train_config);
        rc = do_train(train_opts);
    });

    EmbedOptions embed_opts;
    auto* embed = app.add_subcommand("embed", "embed every dataset row through a checkpoint");
    embed->add_option("--model", embed_opts.model, "checkpoint path");
    embed->add_option("--data", embed_opts.data, "dataset CSV");
    embed->add_option("-o,--out", embed_opts.out, "output directory");
    embed->add_option("--seed", embed_opts.seed, "unused; recorded for provenance");
    std::string embed_config;
    embed->add_option("--config", embed_config, "key=value file; explicit flags take precedence");
    embed->callback([&] {
        merge_config(embed, embed_config);
        rc = do_embed(embed_opts);
    });

    EvalOptions eval_opts;
    auto* eval = app.add_subcommand("eval", "retrieval + clustering report for an embedding file");
    eval->add_option("--embeddings", eval_opts.embeddings, "embedding file");
    eval->add_option("--labels", eval_opts.labels, "labels file");
    eval->add_option("-o,--out", eval_opts.out, "output directory");
    eval->add_option("--ks", eval_opts.ks, "comma-separated recall cutoffs");
    eval->add_flag("--binary", eval_opts.binary, "also report binarized-code retrieval");
    eval->add_option("--nmi-k", eval_opts.nmi_k, "k-means cluster count (0 = label count)");
    eval->add_option("--nmi-norm", eval_opts.nmi_norm, "NMI normalization")
        ->check(CLI::IsMember({"arithmetic", "geometric"}));
    eval->add_option("--seed", eval_opts.seed, "k-means seed");
    std::string eval_config;
    eval->add_option("--config", eval_config, "key=value file; explicit flags take precedence");
    eval->callback([&] {
        merge_config(eval, eval_config);
        rc = do_eval(eval_opts);
    });

    SweepOptions sweep_opts;
    auto* sweep = app.add_subcommand("sweep", "train + evaluate across one swept axis");
    add_train_options(sweep, sweep_opts.train);
    sweep->add_option("--axis", sweep_opts.axis, "swept axis")
        ->check(CLI::IsMember({"dim", "subsample", "samples-per-class"}));
    sweep->add_option("--values", sweep_opts.values, "comma-separated sweep values");
    sweep->add_option("--ks", sweep_opts.ks, "comma-separated recall cutoffs");
    std::string sweep_config;
    sweep->add_option("--config", sweep_config, "key=value file; explicit flags take precedence");
    sweep->callback([&] {
        merge_config(sweep, sweep_config);
        rc = do_sweep(sweep_opts);
    });

    GradcheckOptions gc_opts;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of analytic gradients");
    gc->add_option("--seed", gc_opts.seed, "RNG seed");
    gc->add_option("--loss", gc_opts.loss, "restrict to one arm")
        ->check(CLI::IsMember({"nca", "norm_softmax", "lmcl", "subsampled"}));
    gc->add_flag("--inject-sign-flip", gc_opts.inject_sign_flip,
                 "corrupt one gradient coordinate; the check must fail");
    gc->add_option("-o,--out", gc_opts.out, "optional report directory");
    std::string gc_config;
    gc->add_option("--config", gc_config, "key=value file; explicit flags take precedence");
    gc->callback([&] {
        merge_config(gc, gc_config);
        rc = do_gradcheck(gc_opts);
    });

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const NonFiniteLossError& e) {
        std::fprintf(stderr, "error: non-finite loss at iteration %zu: %s\n", e.iteration,
                     e.what());
        return 3;
    } catch (const ZeroVectorError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return rc;
}

}  // namespace pxe
