#include "mnm/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numbers>
#include <thread>

#include <json.hpp>

#include "mnm/errors.hpp"
#include "mnm/random.hpp"

namespace mnm {

namespace {

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw IoError("cannot open '" + path.string() + "' for writing");
    return out;
}

} // namespace

const char* to_string(Direction d)
{
    return d == Direction::text_to_brain ? "text_to_brain" : "brain_to_text";
}

SimilarityMatrix similarity_matrix(std::span<const LorentzPoint<double>> queries,
                                   std::span<const LorentzPoint<double>> candidates, Direction direction,
                                   Curvature<double> c)
{
    SimilarityMatrix sim;
    sim.values.resize(static_cast<Eigen::Index>(queries.size()), static_cast<Eigen::Index>(candidates.size()));
    for (std::size_t i = 0; i < queries.size(); ++i) {
        for (std::size_t j = 0; j < candidates.size(); ++j) {
            const auto& brain = direction == Direction::text_to_brain ? candidates[j] : queries[i];
            const auto& text = direction == Direction::text_to_brain ? queries[i] : candidates[j];
            double value;
            try {
                value = -exterior_angle(brain, text, c);
            } catch (const DomainError&) {
                value = -std::numbers::pi;
                ++sim.degenerate_pairs;
            }
            sim.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = value;
        }
    }
    return sim;
}

double recall_at_k(const SimilarityMatrix& sim, std::span<const std::size_t> truth, std::size_t k)
{
    const auto nq = static_cast<std::size_t>(sim.values.rows());
    const auto nc = static_cast<std::size_t>(sim.values.cols());
    if (k == 0 || k > nc)
        throw InvalidArgument("recall_at_k: k = " + std::to_string(k) + " not in [1, " + std::to_string(nc) + "]");
    if (truth.size() != nq)
        throw InvalidArgument("recall_at_k: ground truth length does not match query count");
    if (nq == 0)
        return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < nq; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const auto t = static_cast<Eigen::Index>(truth[i]);
        if (truth[i] >= nc)
            throw InvalidArgument("recall_at_k: ground truth index out of range");
        const double s = sim.values(r, t);
        std::size_t rank = 0;
        for (Eigen::Index j = 0; j < sim.values.cols() && rank < k; ++j)
            if (sim.values(r, j) > s || (sim.values(r, j) == s && j < t))
                ++rank;
        if (rank < k)
            ++hits;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(nq);
}

double recall_at_k(const SimilarityMatrix& sim, std::size_t k)
{
    std::vector<std::size_t> truth(static_cast<std::size_t>(sim.values.rows()));
    for (std::size_t i = 0; i < truth.size(); ++i)
        truth[i] = i;
    return recall_at_k(sim, truth, k);
}

RecallStats summarize(std::vector<double> values)
{
    RecallStats s;
    s.folds = std::move(values);
    if (s.folds.empty())
        return s;
    double sum = 0.0;
    for (double v : s.folds)
        sum += v;
    s.mean = sum / static_cast<double>(s.folds.size());
    if (s.folds.size() > 1) {
        double ss = 0.0;
        for (double v : s.folds)
            ss += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(s.folds.size() - 1));
    }
    return s;
}

namespace {

struct FoldRecall {
    std::map<std::size_t, double> t2b, b2t;
    std::size_t degenerate = 0;
};

FoldRecall score_fold(const Embeddings& emb, std::span<const std::size_t> ks, Curvature<double> c)
{
    FoldRecall out;
    const SimilarityMatrix t2b = similarity_matrix(emb.text, emb.brain, Direction::text_to_brain, c);
    const SimilarityMatrix b2t = similarity_matrix(emb.brain, emb.text, Direction::brain_to_text, c);
    out.degenerate = t2b.degenerate_pairs + b2t.degenerate_pairs;
    for (std::size_t k : ks) {
        out.t2b[k] = recall_at_k(t2b, k);
        out.b2t[k] = recall_at_k(b2t, k);
    }
    return out;
}

std::vector<std::size_t> usable_ks(std::span<const std::size_t> ks, std::size_t candidates,
                                   RetrievalReport& report)
{
    std::vector<std::size_t> usable;
    for (std::size_t k : ks) {
        if (k >= 1 && k <= candidates) {
            usable.push_back(k);
        } else {
            report.skipped_k.push_back(k);
            report.notes.push_back("recall@" + std::to_string(k) + " skipped: only " + std::to_string(candidates) +
                                   " candidates per query");
        }
    }
    return usable;
}

} // namespace

RetrievalReport retrieval_report(const Embeddings& emb, std::span<const std::size_t> ks, Curvature<double> c)
{
    if (emb.brain.size() != emb.text.size())
        throw InvalidArgument("retrieval_report: brain and text embedding counts differ");
    RetrievalReport report;
    const std::vector<std::size_t> usable = usable_ks(ks, emb.brain.size(), report);
    const FoldRecall f = score_fold(emb, usable, c);
    for (std::size_t k : usable) {
        report.text_to_brain[k] = summarize({f.t2b.at(k)});
        report.brain_to_text[k] = summarize({f.b2t.at(k)});
    }
    report.degenerate_pairs = f.degenerate;
    return report;
}

std::vector<LorentzPoint<double>> random_embeddings(std::size_t n, Eigen::Index dim, Curvature<double> c,
                                                    std::uint64_t seed)
{
    Rng rng(seed, 0x6e756c6cULL);
    std::vector<LorentzPoint<double>> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        TangentVector<double> z{Vector<double>(dim)};
        for (Eigen::Index j = 0; j < dim; ++j)
            z.space[j] = rng.normal();
        out.push_back(exp_map_origin(z, c));
    }
    return out;
}

RetrievalReport cross_validated_retrieval(const Dataset& data, const ModelConfig& model, const TrainConfig& train,
                                          const CrossValidationOptions& opt)
{
    const std::vector<Fold> folds = kfold_split(data, opt.folds, opt.split_seed);
    RetrievalReport report;
    std::size_t smallest = data.size();
    for (const Fold& f : folds)
        smallest = std::min(smallest, f.test.size());
    const std::vector<std::size_t> usable = usable_ks(opt.ks, smallest, report);

    const Curvature<double> c = train.loss.c;
    std::vector<FoldRecall> results(folds.size());
    std::vector<std::exception_ptr> errors(folds.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t f = next++; f < folds.size(); f = next++) {
            try {
                const Dataset test = data.subset(folds[f].test);
                Embeddings emb;
                if (opt.model == ModelKind::null) {
                    const Eigen::Index dim = model.brain.output_dim;
                    emb.brain = random_embeddings(test.size(), dim, c, mix_seed(opt.split_seed, 2 * f));
                    emb.text = random_embeddings(test.size(), dim, c, mix_seed(opt.split_seed, 2 * f + 1));
                } else {
                    const TrainResult trained = mnm::train(data.subset(folds[f].train), model, train);
                    emb = embed_dataset(trained.state.params, test, c);
                }
                results[f] = score_fold(emb, usable, c);
            } catch (...) {
                errors[f] = std::current_exception();
            }
        }
    };
    const unsigned nthreads = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(folds.size())));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < nthreads; ++t)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();

    for (std::size_t f = 0; f < folds.size(); ++f) {
        if (!errors[f])
            continue;
        try {
            std::rethrow_exception(errors[f]);
        } catch (const std::exception& e) {
            throw FoldError(f, e.what());
        }
    }
    for (std::size_t k : usable) {
        std::vector<double> t2b, b2t;
        for (const FoldRecall& r : results) {
            t2b.push_back(r.t2b.at(k));
            b2t.push_back(r.b2t.at(k));
        }
        report.text_to_brain[k] = summarize(std::move(t2b));
        report.brain_to_text[k] = summarize(std::move(b2t));
    }
    for (const FoldRecall& r : results)
        report.degenerate_pairs += r.degenerate;
    return report;
}

double kendall_tau(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size())
        throw InvalidArgument("kendall_tau: length mismatch");
    if (x.size() < 2)
        throw InvalidArgument("kendall_tau: need at least two observations");
    // n0 - n1 and n0 - n2 count pairs not tied in x and in y respectively.
    long double concordant = 0, discordant = 0, untied_x = 0, untied_y = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = i + 1; j < x.size(); ++j) {
            const double dx = x[i] - x[j];
            const double dy = y[i] - y[j];
            if (dx != 0.0)
                ++untied_x;
            if (dy != 0.0)
                ++untied_y;
            const int s = ((dx > 0.0) - (dx < 0.0)) * ((dy > 0.0) - (dy < 0.0));
            if (s > 0)
                ++concordant;
            else if (s < 0)
                ++discordant;
        }
    }
    if (untied_x == 0 || untied_y == 0)
        throw UndefinedCorrelation("kendall_tau: one variable is constant");
    return static_cast<double>((concordant - discordant) / std::sqrt(untied_x * untied_y));
}

double kendall_tau(std::span<const double> x, std::span<const std::uint32_t> y)
{
    std::vector<double> yd(y.begin(), y.end());
    return kendall_tau(x, std::span<const double>(yd));
}

std::vector<double> time_components(std::span<const LorentzPoint<double>> pts)
{
    std::vector<double> out;
    out.reserve(pts.size());
    for (const auto& p : pts)
        out.push_back(p.time);
    return out;
}

Eigen::VectorXd basis_similarity_scores(const LorentzPoint<double>& text,
                                        std::span<const LorentzPoint<double>> basis, Curvature<double> c,
                                        std::size_t* degenerate)
{
    if (basis.empty())
        throw InvalidArgument("basis_similarity_scores: empty basis");
    const SimilarityMatrix sim =
        similarity_matrix(std::span<const LorentzPoint<double>>(&text, 1), basis, Direction::text_to_brain, c);
    if (degenerate)
        *degenerate += sim.degenerate_pairs;
    const Eigen::VectorXd s = sim.values.row(0).transpose();
    Eigen::VectorXd e = (s.array() - s.maxCoeff()).exp();
    return e / e.sum();
}

std::vector<bool> top_percentile_mask(std::span<const double> scores, double fraction)
{
    if (scores.empty())
        throw InvalidArgument("top_percentile_mask: empty score list");
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw InvalidArgument("top_percentile_mask: fraction must lie in (0, 1]");
    // The 1e-9 absorbs representation error, e.g. 0.1 * 30 = 3.0000000000000004.
    const auto count = std::min(scores.size(), static_cast<std::size_t>(std::ceil(
                                                   fraction * static_cast<double>(scores.size()) - 1e-9)));
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<bool> mask(scores.size(), false);
    for (std::size_t k = 0; k < count; ++k)
        mask[order[k]] = true;
    return mask;
}

std::vector<Eigen::Vector2d> poincare_disk_coordinates(std::span<const LorentzPoint<double>> pts,
                                                       Curvature<double> c)
{
    std::vector<Eigen::Vector2d> out;
    if (pts.empty())
        return out;
    const Eigen::Index d = pts.front().dim();
    if (d < 2)
        throw InvalidArgument("poincare export needs at least two space dimensions");

    Eigen::Index axis0 = 0, axis1 = 1;
    if (d > 2) {
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
        for (const auto& p : pts)
            mean += p.space;
        mean /= static_cast<double>(pts.size());
        Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
        for (const auto& p : pts)
            var += (p.space - mean).array().square().matrix();
        std::vector<Eigen::Index> axes(static_cast<std::size_t>(d));
        for (Eigen::Index j = 0; j < d; ++j)
            axes[static_cast<std::size_t>(j)] = j;
        std::stable_sort(axes.begin(), axes.end(), [&](Eigen::Index a, Eigen::Index b) { return var[a] > var[b]; });
        axis0 = std::min(axes[0], axes[1]);
        axis1 = std::max(axes[0], axes[1]);
    }
    out.reserve(pts.size());
    for (const auto& p : pts) {
        const Eigen::Vector2d s(p.space[axis0], p.space[axis1]);
        const LorentzPoint<double> flat = lift_time(s, c);
        out.emplace_back(c.sqrt() * poincare_projection(flat, c));
    }
    return out;
}

void export_poincare(std::span<const LorentzPoint<double>> pts, std::span<const std::string> labels,
                     const std::filesystem::path& path, Curvature<double> c)
{
    if (labels.size() != pts.size())
        throw InvalidArgument("export_poincare: label count does not match embedding count");
    const std::vector<Eigen::Vector2d> xy = poincare_disk_coordinates(pts, c);
    std::ofstream out = open_out(path);
    out << "label,x,y\n";
    for (std::size_t i = 0; i < xy.size(); ++i)
        out << labels[i] << ',' << fmt(xy[i].x()) << ',' << fmt(xy[i].y()) << '\n';
    if (!out)
        throw IoError("write failed for '" + path.string() + "'");
}

void export_time_histogram(std::span<const LorentzPoint<double>> brain, std::span<const std::uint32_t> counts,
                           const std::filesystem::path& path)
{
    if (brain.size() != counts.size())
        throw InvalidArgument("export_time_histogram: length mismatch");
    std::ofstream out = open_out(path);
    out << "time,region_count\n";
    for (std::size_t i = 0; i < brain.size(); ++i)
        out << fmt(brain[i].time) << ',' << counts[i] << '\n';
    if (!out)
        throw IoError("write failed for '" + path.string() + "'");
}

std::string to_json(const EvalReport& report)
{
    using nlohmann::json;
    auto table = [](const std::map<std::size_t, RecallStats>& m) {
        json t = json::object();
        for (const auto& [k, s] : m)
            t[std::to_string(k)] = {{"folds", s.folds}, {"mean", s.mean}, {"std", s.stddev}};
        return t;
    };
    json j;
    j["recall"] = {{"text_to_brain", table(report.retrieval.text_to_brain)},
                   {"brain_to_text", table(report.retrieval.brain_to_text)}};
    j["tau"] = report.kendall_tau ? json(*report.kendall_tau) : json(nullptr);
    json scores = json::array();
    for (const BasisScore& b : report.basis_scores) {
        std::vector<int> mask(b.top_mask.begin(), b.top_mask.end());
        scores.push_back({{"query", b.query}, {"probabilities", b.probabilities}, {"top_mask", mask}});
    }
    j["basis_scores"] = scores;
    std::vector<std::string> notes = report.retrieval.notes;
    notes.insert(notes.end(), report.notes.begin(), report.notes.end());
    j["diagnostics"] = {{"degenerate_pairs", report.degenerate_pairs + report.retrieval.degenerate_pairs},
                        {"skipped_k", report.retrieval.skipped_k},
                        {"notes", notes}};
    return j.dump(2) + "\n";
}

} // namespace mnm
