#include "mnm/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "mnm/checkpoint.hpp"
#include "mnm/data.hpp"
#include "mnm/errors.hpp"
#include "mnm/evaluation.hpp"
#include "mnm/random.hpp"
#include "mnm/training.hpp"

namespace mnm {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

/// Raised for configuration problems detected after parsing (exit code 2).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataOptions {
    std::string path;
    SyntheticSpec synthetic;
};

void add_data_options(CLI::App* sub, DataOptions& d)
{
    auto* data = sub->add_option("--data", d.path, "Dataset container or .jsonl file");
    const std::vector<CLI::Option*> synth = {
        sub->add_option("--depth", d.synthetic.tree_depth, "Synthetic tree depth")->capture_default_str(),
        sub->add_option("--branching", d.synthetic.branching, "Synthetic branching factor")->capture_default_str(),
        sub->add_option("--per-node", d.synthetic.samples_per_node, "Synthetic samples per node")
            ->capture_default_str(),
        sub->add_option("--noise", d.synthetic.noise_sigma, "Synthetic noise sigma")->capture_default_str(),
        sub->add_option("--brain-dim", d.synthetic.brain_dim, "Synthetic brain feature width")
            ->capture_default_str(),
        sub->add_option("--text-dim", d.synthetic.text_dim, "Synthetic text feature width")->capture_default_str(),
    };
    for (auto* o : synth)
        data->excludes(o);
    sub->add_option("--delta", d.synthetic.delta, "Region-count threshold for synthetic or JSON-lines data")
        ->capture_default_str();
}

Dataset resolve_data(const DataOptions& d, std::uint64_t seed)
{
    if (!d.path.empty())
        return load_dataset(d.path, d.synthetic.delta);
    SyntheticSpec spec = d.synthetic;
    spec.seed = seed;
    return generate_synthetic(spec);
}

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

bool user_gave(const std::vector<std::string>& args, const std::string& flag)
{
    return std::any_of(args.begin(), args.end(),
                       [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
}

/// Expands `--config file.json` into flags placed before the user's own, so
/// explicit flags win. Returns the rewritten argument list.
std::vector<std::string> expand_config(const std::vector<std::string>& args, CLI::App& app)
{
    std::optional<std::string> config;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size())
            config = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0)
            config = args[i].substr(9);
    }
    if (!config || args.empty())
        return args;

    std::ifstream in(*config);
    if (!in)
        throw UsageError("cannot read config file '" + *config + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw UsageError("config file '" + *config + "' is not valid JSON: " + e.what());
    }
    if (!j.is_object())
        throw UsageError("config file '" + *config + "' must hold a JSON object");

    CLI::App* sub = nullptr;
    try {
        sub = app.get_subcommand(args.front());
    } catch (const CLI::OptionNotFound&) {
        return args;
    }
    std::vector<std::string> unknown;
    std::vector<std::string> injected;
    for (const auto& [key, value] : j.items()) {
        const std::string flag = "--" + key;
        if (sub->get_option_no_throw(flag) == nullptr || key == "config") {
            unknown.push_back(key);
            continue;
        }
        if (user_gave(args, flag))
            continue;
        if (value.is_boolean()) {
            if (value.get<bool>())
                injected.push_back(flag);
        } else if (value.is_array()) {
            injected.push_back(flag);
            for (const auto& v : value)
                injected.push_back(v.is_string() ? v.get<std::string>() : v.dump());
        } else {
            injected.push_back(flag);
            injected.push_back(value.is_string() ? value.get<std::string>() : value.dump());
        }
    }
    if (!unknown.empty()) {
        std::string msg = "config file '" + *config + "' has unknown keys:";
        for (const auto& k : unknown)
            msg += " " + k;
        throw UsageError(msg);
    }
    std::vector<std::string> out{args.front()};
    out.insert(out.end(), injected.begin(), injected.end());
    out.insert(out.end(), args.begin() + 1, args.end());
    return out;
}

void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
}

json echo_config(const TrainConfig& t, double delta, std::uint32_t hidden, std::uint32_t embed_dim)
{
    return {{"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"lr", t.optimizer.lr},
            {"weight_decay", t.optimizer.weight_decay},
            {"beta1", t.optimizer.beta1},
            {"beta2", t.optimizer.beta2},
            {"eps", t.optimizer.eps},
            {"tau", t.loss.tau},
            {"lambda1", t.loss.lambda1},
            {"lambda2", t.loss.lambda2},
            {"p", t.loss.p},
            {"q", t.loss.q},
            {"curvature", t.loss.c.value()},
            {"symmetric", t.loss.symmetric},
            {"delta", delta},
            {"hidden_dim", hidden},
            {"embed_dim", embed_dim},
            {"seed", t.seed}};
}

json epoch_json(const EpochRecord& r)
{
    return {{"epoch", r.epoch},
            {"angle", r.loss.angle},
            {"centroid", r.loss.centroid},
            {"hierarchy", r.loss.hierarchy},
            {"total", r.loss.total}};
}

void write_embeddings(const std::vector<LorentzPoint<double>>& pts, const fs::path& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw IoError("cannot open '" + path.string() + "' for writing");
    const Eigen::Index d = pts.empty() ? 0 : pts.front().dim();
    out << "index,time";
    for (Eigen::Index j = 0; j < d; ++j)
        out << ",x" << j;
    out << '\n';
    for (std::size_t i = 0; i < pts.size(); ++i) {
        out << i << ',' << fmt(pts[i].time);
        for (Eigen::Index j = 0; j < d; ++j)
            out << ',' << fmt(pts[i].space[j]);
        out << '\n';
    }
    if (!out)
        throw IoError("write failed for '" + path.string() + "'");
}

} // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Hyperbolic brain-text embedding: generate data, train, evaluate, embed"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    std::uint64_t seed = 0;
    unsigned threads = std::max(1u, std::thread::hardware_concurrency());

    // generate
    DataOptions gen_data;
    std::string gen_out;
    std::string gen_import;
    auto* gen = app.add_subcommand("generate", "Write a synthetic (or imported JSON-lines) dataset container");
    gen->add_option("--out", gen_out, "Output dataset path")->required();
    gen->add_option("--seed", seed, "Random seed")->capture_default_str();
    gen->add_option("--from-jsonl", gen_import, "Convert a JSON-lines file instead of generating");
    add_data_options(gen, gen_data);
    gen->remove_option(gen->get_option("--data"));

    // train
    DataOptions train_data;
    TrainConfig tc;
    double curvature = tc.loss.c.value();
    std::uint32_t hidden = 512;
    std::uint32_t embed_dim = 64;
    std::string out_dir = "out";
    std::string resume;
    std::string log_file;
    std::string config_path;
    auto* tr = app.add_subcommand("train", "Train both encoders");
    tr->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    tr->add_option("--config", config_path, "JSON file with flat keys mirroring the flags");
    add_data_options(tr, train_data);
    tr->add_option("--epochs", tc.epochs, "Training epochs (additional epochs with --resume)")->capture_default_str();
    tr->add_option("--batch-size", tc.batch_size)->capture_default_str();
    tr->add_option("--lr", tc.optimizer.lr)->capture_default_str();
    tr->add_option("--weight-decay", tc.optimizer.weight_decay)->capture_default_str();
    tr->add_option("--beta1", tc.optimizer.beta1)->capture_default_str();
    tr->add_option("--beta2", tc.optimizer.beta2)->capture_default_str();
    tr->add_option("--eps", tc.optimizer.eps)->capture_default_str();
    tr->add_option("--tau", tc.loss.tau, "InfoNCE temperature")->capture_default_str();
    tr->add_option("--lambda1", tc.loss.lambda1, "Centroid loss weight")->capture_default_str();
    tr->add_option("--lambda2", tc.loss.lambda2, "Hierarchy loss weight")->capture_default_str();
    tr->add_option("--p", tc.loss.p, "Text centroid target parameter")->capture_default_str();
    tr->add_option("--q", tc.loss.q, "Brain centroid target parameter")->capture_default_str();
    tr->add_option("--curvature", curvature, "Curvature magnitude c")->capture_default_str();
    tr->add_flag("--symmetric", tc.loss.symmetric, "Contrast in both directions");
    tr->add_option("--hidden-dim", hidden)->capture_default_str();
    tr->add_option("--embed-dim", embed_dim, "Hyperbolic dimension d")->capture_default_str();
    tr->add_option("--seed", seed, "Seed for data, initialization and shuffling")->capture_default_str();
    tr->add_option("--out-dir", out_dir)->capture_default_str();
    tr->add_option("--resume", resume, "Continue from a checkpoint (its training configuration is reused)");
    tr->add_option("--log-file", log_file, "Also append epoch records here");
    tr->add_option("--threads", threads, "Worker cap")->capture_default_str();

    // eval
    DataOptions eval_data;
    std::string ckpt_path;
    std::string eval_out_dir = "out";
    std::size_t cv_folds = 0;
    std::vector<std::size_t> ks{5, 10, 100};
    bool null_model = false;
    bool export_poincare_flag = false;
    bool export_hist_flag = false;
    std::string basis_path;
    std::size_t basis_queries = 10;
    std::uint32_t cv_epochs = 0;
    auto* ev = app.add_subcommand("eval", "Retrieval, hierarchy and basis-scoring analyses");
    ev->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    ev->add_option("--config", config_path, "JSON file with flat keys mirroring the flags");
    ev->add_option("--checkpoint", ckpt_path)->required();
    add_data_options(ev, eval_data);
    ev->add_option("--out-dir", eval_out_dir)->capture_default_str();
    ev->add_option("--cv-folds", cv_folds, "Cross-validate with this many folds (0: score the checkpoint)")
        ->capture_default_str();
    ev->add_option("--cv-epochs", cv_epochs, "Epochs per fold (0: the checkpoint's setting)")->capture_default_str();
    ev->add_option("--k", ks, "Recall cutoffs")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)->expected(1, -1);
    ev->add_flag("--null-model", null_model, "Score random embeddings instead of the model");
    ev->add_flag("--export-poincare", export_poincare_flag, "Write poincare.csv");
    ev->add_flag("--export-histogram", export_hist_flag, "Write time_histogram.csv");
    ev->add_option("--basis", basis_path, "Basis dataset scored against text embeddings");
    ev->add_option("--basis-queries", basis_queries, "Number of text queries scored against the basis")
        ->capture_default_str();
    ev->add_option("--seed", seed)->capture_default_str();
    ev->add_option("--threads", threads)->capture_default_str();

    // embed
    DataOptions embed_data;
    std::string embed_out_dir = "out";
    auto* em = app.add_subcommand("embed", "Dump per-sample embeddings as CSV");
    em->add_option("--checkpoint", ckpt_path)->required();
    add_data_options(em, embed_data);
    em->add_option("--out-dir", embed_out_dir)->capture_default_str();
    em->add_option("--seed", seed)->capture_default_str();

    std::vector<std::string> args;
    try {
        args = expand_config(raw_args, app);
        std::vector<const char*> argv{"mnm"};
        for (const auto& a : args)
            argv.push_back(a.c_str());
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (gen->parsed()) {
            Dataset ds;
            std::size_t nodes = 0;
            if (!gen_import.empty()) {
                ds = load_dataset(gen_import, gen_data.synthetic.delta);
            } else {
                SyntheticSpec spec = gen_data.synthetic;
                spec.seed = seed;
                ds = generate_synthetic(spec);
                nodes = spec.node_count();
            }
            save_dataset(ds, gen_out);
            out << "N=" << ds.size() << " B=" << ds.brain_dim() << " T=" << ds.text_dim() << " nodes=" << nodes
                << "\n";
            return kExitOk;
        }

        if (tr->parsed()) {
            std::vector<std::string> problems;
            std::optional<Curvature<double>> c;
            try {
                c = Curvature<double>(curvature);
            } catch (const InvalidArgument&) {
                problems.push_back("curvature: must be positive (got " + fmt(curvature) + ")");
            }
            if (c)
                tc.loss.c = *c;
            tc.seed = seed;
            const bool resuming = !resume.empty();
            if (!resuming) {
                for (auto& p : tc.problems())
                    problems.push_back(std::move(p));
                if (hidden == 0)
                    problems.push_back("hidden-dim: must be positive");
                if (embed_dim == 0)
                    problems.push_back("embed-dim: must be positive");
            }
            if (!problems.empty()) {
                for (const auto& p : problems)
                    err << "error: " << p << "\n";
                return kExitUsage;
            }

            const Dataset data = resolve_data(train_data, seed);
            ensure_dir(out_dir);
            const fs::path log_path = fs::path(out_dir) / "loss_log.jsonl";
            std::ofstream log(log_path, resuming ? std::ios::app : std::ios::trunc);
            std::ofstream extra_log;
            if (!log_file.empty())
                extra_log.open(log_file, std::ios::app);
            if (!log || (!log_file.empty() && !extra_log))
                throw IoError("cannot open loss log for writing");

            Checkpoint ckpt;
            const ProgressSink sink = [&](const EpochRecord& r) {
                const std::string line = epoch_json(r).dump();
                out << line << "\n";
                log << line << "\n";
                if (extra_log.is_open())
                    extra_log << line << "\n";
            };
            if (resuming) {
                ckpt = load_checkpoint(resume);
                out << "resume " << resume << " at epoch " << ckpt.state.epochs_done << ", " << tc.epochs
                    << " more\n";
                out << "config " << echo_config(ckpt.train, data.delta, ckpt.state.params.text.config.hidden_dim,
                                                 ckpt.state.params.text.config.output_dim)
                                        .dump()
                    << "\n";
                TrainResult r = continue_training(data, std::move(ckpt.state), ckpt.train, tc.epochs, sink);
                ckpt.state = std::move(r.state);
                // The stored epoch count always describes the whole run.
                ckpt.train.epochs = ckpt.state.epochs_done;
            } else {
                out << "config " << echo_config(tc, data.delta, hidden, embed_dim).dump() << "\n";
                const ModelConfig model = default_model_config(static_cast<std::uint32_t>(data.brain_dim()),
                                                               static_cast<std::uint32_t>(data.text_dim()), hidden,
                                                               embed_dim, seed);
                TrainResult r = train(data, model, tc, sink);
                ckpt.train = tc;
                ckpt.state = std::move(r.state);
            }
            const fs::path ckpt_out = fs::path(out_dir) / "checkpoint.bin";
            save_checkpoint(ckpt, ckpt_out);
            out << "wrote " << ckpt_out.string() << "\n";
            return kExitOk;
        }

        if (ev->parsed()) {
            const Checkpoint ckpt = load_checkpoint(ckpt_path);
            const Dataset data = resolve_data(eval_data, seed);
            const Curvature<double> c = ckpt.train.loss.c;
            const Embeddings emb = embed_dataset(ckpt.state.params, data, c);
            ensure_dir(eval_out_dir);

            EvalReport report;
            try {
                report.kendall_tau = kendall_tau(time_components(emb.brain), data.region_counts);
            } catch (const DomainError& e) {
                report.notes.push_back(std::string("tau undefined: ") + e.what());
            } catch (const InvalidArgument& e) {
                report.notes.push_back(std::string("tau undefined: ") + e.what());
            }

            if (cv_folds > 0) {
                TrainConfig fold_cfg = ckpt.train;
                if (cv_epochs > 0)
                    fold_cfg.epochs = cv_epochs;
                CrossValidationOptions opt;
                opt.folds = cv_folds;
                opt.ks = ks;
                opt.split_seed = seed;
                opt.threads = threads;
                opt.model = null_model ? ModelKind::null : ModelKind::trained;
                report.retrieval = cross_validated_retrieval(data, ckpt.model(), fold_cfg, opt);
            } else if (null_model) {
                const Eigen::Index d = ckpt.state.params.brain.config.output_dim;
                const Embeddings rnd{random_embeddings(data.size(), d, c, mix_seed(seed, 1)),
                                     random_embeddings(data.size(), d, c, mix_seed(seed, 2))};
                report.retrieval = retrieval_report(rnd, ks, c);
            } else {
                report.retrieval = retrieval_report(emb, ks, c);
            }

            if (!basis_path.empty()) {
                const Dataset basis_data = load_dataset(basis_path, eval_data.synthetic.delta);
                if (basis_data.brain_dim() != data.brain_dim())
                    throw ValidationError("basis brain width " + std::to_string(basis_data.brain_dim()) +
                                          " differs from dataset brain width " + std::to_string(data.brain_dim()));
                const std::vector<LorentzPoint<double>> basis =
                    forward(ckpt.state.params.brain, basis_data.brain, c).points;
                const std::size_t nq = std::min(basis_queries, emb.text.size());
                for (std::size_t i = 0; i < nq; ++i) {
                    BasisScore s;
                    s.query = i;
                    const Eigen::VectorXd probs =
                        basis_similarity_scores(emb.text[i], basis, c, &report.degenerate_pairs);
                    s.probabilities.assign(probs.data(), probs.data() + probs.size());
                    s.top_mask = top_percentile_mask(s.probabilities);
                    report.basis_scores.push_back(std::move(s));
                }
            }

            if (export_poincare_flag) {
                std::vector<std::string> labels;
                for (std::size_t i = 0; i < emb.brain.size(); ++i)
                    labels.push_back("brain_" + std::to_string(i) + "_R" + std::to_string(data.region_counts[i]));
                const fs::path p = fs::path(eval_out_dir) / "poincare.csv";
                export_poincare(emb.brain, labels, p, c);
                out << "wrote " << p.string() << "\n";
            }
            if (export_hist_flag) {
                const fs::path p = fs::path(eval_out_dir) / "time_histogram.csv";
                export_time_histogram(emb.brain, data.region_counts, p);
                out << "wrote " << p.string() << "\n";
            }

            const fs::path report_path = fs::path(eval_out_dir) / "eval_report.json";
            const std::string text = to_json(report);
            std::ofstream rep(report_path, std::ios::trunc);
            if (!rep || !(rep << text))
                throw IoError("cannot write '" + report_path.string() + "'");
            for (const auto& [k, s] : report.retrieval.text_to_brain)
                out << "recall@" << k << " text->brain " << s.mean << " brain->text "
                    << report.retrieval.brain_to_text.at(k).mean << "\n";
            if (report.kendall_tau)
                out << "kendall_tau " << *report.kendall_tau << "\n";
            out << "wrote " << report_path.string() << "\n";
            return kExitOk;
        }

        if (em->parsed()) {
            const Checkpoint ckpt = load_checkpoint(ckpt_path);
            const Dataset data = resolve_data(embed_data, seed);
            const Embeddings emb = embed_dataset(ckpt.state.params, data, ckpt.train.loss.c);
            ensure_dir(embed_out_dir);
            const fs::path bp = fs::path(embed_out_dir) / "brain_embeddings.csv";
            const fs::path tp = fs::path(embed_out_dir) / "text_embeddings.csv";
            write_embeddings(emb.brain, bp);
            write_embeddings(emb.text, tp);
            out << "wrote " << bp.string() << " and " << tp.string() << " (" << data.size() << " rows each)\n";
            return kExitOk;
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

} // namespace mnm
