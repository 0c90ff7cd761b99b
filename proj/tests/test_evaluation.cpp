#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "mnm/errors.hpp"
#include "mnm/evaluation.hpp"
#include "mnm/random.hpp"

using namespace mnm;
namespace fs = std::filesystem;

namespace {

using P = LorentzPoint<double>;

SimilarityMatrix from_values(Eigen::MatrixXd v)
{
    SimilarityMatrix s;
    s.values = std::move(v);
    return s;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path temp_path(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / "mnm_test_eval";
    fs::create_directories(dir);
    return dir / name;
}

P radial(double r, double angle, Curvature<double> c)
{
    return exp_map_origin(TangentVector<double>{Eigen::Vector2d(r * std::cos(angle), r * std::sin(angle))}, c);
}

} // namespace

TEST_CASE("recall@k hand cases")
{
    Eigen::MatrixXd id = Eigen::MatrixXd::Constant(5, 5, -1.0);
    id.diagonal().setZero();
    CHECK(recall_at_k(from_values(id), 1) == 100.0);

    // True match always ranked last.
    Eigen::MatrixXd rev = Eigen::MatrixXd::Zero(10, 10);
    rev.diagonal().setConstant(-1.0);
    CHECK(recall_at_k(from_values(rev), 5) == 0.0);

    // True ranks 1, 2, 3, 4 for the four queries.
    Eigen::MatrixXd r(4, 4);
    r << 0.9, 0.1, 0.2, 0.3,
         0.9, 0.5, 0.2, 0.1,
         0.9, 0.8, 0.3, 0.1,
         0.9, 0.8, 0.7, 0.1;
    CHECK(recall_at_k(from_values(r), 2) == 50.0);
    CHECK(recall_at_k(from_values(r), 4) == 100.0);

    // Ties go to the lower candidate index.
    Eigen::MatrixXd tie = Eigen::MatrixXd::Zero(3, 3);
    CHECK(recall_at_k(from_values(tie), 1) == doctest::Approx(100.0 / 3.0));
    CHECK(recall_at_k(from_values(tie), 2) == doctest::Approx(200.0 / 3.0));

    CHECK_THROWS_AS(recall_at_k(from_values(r), 5), InvalidArgument);
    CHECK_THROWS_AS(recall_at_k(from_values(r), 0), InvalidArgument);

    const std::vector<std::size_t> truth{0, 0, 0, 0};
    CHECK(recall_at_k(from_values(r), truth, 1) == 100.0);
}

TEST_CASE("recall is rank based and monotone in k")
{
    Rng rng(1);
    Eigen::MatrixXd v(30, 30);
    for (Eigen::Index i = 0; i < v.size(); ++i)
        v.data()[i] = -std::numbers::pi * rng.uniform();
    const SimilarityMatrix s = from_values(v);
    const SimilarityMatrix t = from_values((3.0 * v.array()).exp().matrix());
    double prev = 0.0;
    for (std::size_t k = 1; k <= 30; ++k) {
        const double r = recall_at_k(s, k);
        CHECK(r == recall_at_k(t, k));
        CHECK(r >= prev);
        CHECK(r >= 0.0);
        CHECK(r <= 100.0);
        prev = r;
    }
}

TEST_CASE("similarity matrix keeps brain in the parent slot")
{
    const Curvature<double> c(1.0);
    const std::vector<P> brain{radial(0.5, 0.0, c), radial(0.8, 1.0, c), radial(0.6, 2.5, c)};
    const std::vector<P> text{radial(1.5, 0.0, c), radial(1.2, 1.3, c), radial(0.9, -2.0, c)};
    const SimilarityMatrix t2b = similarity_matrix(text, brain, Direction::text_to_brain, c);
    const SimilarityMatrix b2t = similarity_matrix(brain, text, Direction::brain_to_text, c);
    for (Eigen::Index i = 0; i < 3; ++i)
        for (Eigen::Index j = 0; j < 3; ++j) {
            const double ext = exterior_angle(brain[j], text[i], c);
            CHECK(t2b.values(i, j) == -ext);
            CHECK(b2t.values(j, i) == -ext);
            CHECK(t2b.values(i, j) <= 0.0);
            CHECK(t2b.values(i, j) >= -std::numbers::pi);
        }
    // text[0] lies beyond brain[0] on the same ray: angle 0, the maximum.
    CHECK(t2b.values(0, 0) == doctest::Approx(0.0).scale(1.0).epsilon(1e-7));
    CHECK(t2b.degenerate_pairs == 0);

    // A brain embedding at the origin is degenerate: scored -pi and counted.
    const std::vector<P> with_origin{origin<double>(2, c)};
    const SimilarityMatrix d = similarity_matrix(text, with_origin, Direction::text_to_brain, c);
    CHECK(d.degenerate_pairs == 3);
    CHECK(d.values(1, 0) == -std::numbers::pi);
}

TEST_CASE("summary statistics use the sample standard deviation")
{
    const RecallStats s = summarize({10.0, 20.0, 30.0});
    CHECK(s.mean == doctest::Approx(20.0));
    CHECK(s.stddev == doctest::Approx(10.0));
    CHECK(summarize({42.0}).stddev == 0.0);
}

TEST_CASE("kendall tau")
{
    const std::vector<double> a{1, 2, 3, 4, 5};
    const std::vector<double> inv{5, 4, 3, 2, 1};
    CHECK(kendall_tau(a, a) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(kendall_tau(a, inv) == doctest::Approx(-1.0).epsilon(1e-15));
    const std::vector<double> x{1, 2, 3}, y{1, 3, 2};
    CHECK(kendall_tau(x, y) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    // Tie-corrected: x = (1,1,2,3), y = (1,2,2,3). Pair (0,1) is tied in x,
    // pair (1,2) is tied in y, the other four are concordant:
    // 4 / sqrt((6 - 1) * (6 - 1)) = 0.8.
    const std::vector<double> tx{1, 1, 2, 3}, ty{1, 2, 2, 3};
    CHECK(kendall_tau(tx, ty) == doctest::Approx(0.8).epsilon(1e-15));

    // Antisymmetry on random no-tie data.
    Rng rng(2);
    std::vector<double> u(40), v(40), neg(40);
    for (std::size_t i = 0; i < 40; ++i) {
        u[i] = rng.normal();
        v[i] = rng.normal();
        neg[i] = -v[i];
    }
    CHECK(kendall_tau(u, neg) == doctest::Approx(-kendall_tau(u, v)).epsilon(1e-15));

    const std::vector<double> flat{2, 2, 2};
    CHECK_THROWS_AS(kendall_tau(flat, x), UndefinedCorrelation);
    CHECK_THROWS_AS(kendall_tau(std::vector<double>{1.0}, std::vector<double>{1.0}), InvalidArgument);

    const std::vector<std::uint32_t> counts{9, 7, 5};
    CHECK(kendall_tau(std::vector<double>{1.0, 1.5, 2.0}, counts) == -1.0);
}

TEST_CASE("basis similarity scores")
{
    const Curvature<double> c(1.0);
    // Identical bases give identical angles.
    const P text = radial(1.0, 0.0, c);
    const std::vector<P> equal{radial(0.5, 0.0, c), radial(0.5, 0.0, c)};
    const Eigen::VectorXd u = basis_similarity_scores(text, equal, c);
    CHECK(u[0] == doctest::Approx(0.5));
    CHECK(u.sum() == doctest::Approx(1.0).epsilon(1e-12));

    // Similarities 0 and -pi: one basis behind the text on its ray, one
    // degenerate (at the origin).
    const std::vector<P> two{radial(0.5, 0.0, c), origin<double>(2, c)};
    std::size_t degenerate = 0;
    const Eigen::VectorXd p = basis_similarity_scores(text, two, c, &degenerate);
    const double e = std::exp(-std::numbers::pi);
    CHECK(p[0] == doctest::Approx(1.0 / (1.0 + e)).epsilon(1e-6));
    CHECK(p[1] == doctest::Approx(e / (1.0 + e)).epsilon(1e-6));
    CHECK(p[0] == doctest::Approx(0.9587).epsilon(1e-4));
    CHECK(p[1] == doctest::Approx(0.0413).epsilon(1e-2));
    CHECK(degenerate == 1);

    Rng rng(3);
    std::vector<P> many;
    for (int i = 0; i < 50; ++i)
        many.push_back(radial(0.2 + rng.uniform(), 2 * std::numbers::pi * rng.uniform(), c));
    CHECK(std::abs(basis_similarity_scores(text, many, c).sum() - 1.0) <= 1e-9);
    CHECK_THROWS_AS(basis_similarity_scores(text, std::vector<P>{}, c), InvalidArgument);
}

TEST_CASE("top percentile mask")
{
    std::vector<double> twenty(20);
    for (std::size_t i = 0; i < 20; ++i)
        twenty[i] = static_cast<double>((i * 7) % 20);
    const auto m20 = top_percentile_mask(twenty);
    CHECK(std::count(m20.begin(), m20.end(), true) == 2);
    CHECK(m20[17]);  // score 19
    CHECK(m20[14]);  // score 18

    const std::vector<double> seven{0.1, 0.5, 0.3, 0.2, 0.9, 0.4, 0.6};
    const auto m7 = top_percentile_mask(seven);
    CHECK(std::count(m7.begin(), m7.end(), true) == 1);
    CHECK(m7[4]);

    const auto flat = top_percentile_mask(std::vector<double>(10, 1.0));
    CHECK(std::count(flat.begin(), flat.end(), true) == 1);
    CHECK(flat[0]);
}

TEST_CASE("null model recall sits at chance")
{
    // 10 folds of 200 test queries each: recall@10 should be close to 5%.
    SyntheticSpec spec;
    spec.tree_depth = 1;
    spec.branching = 1;
    spec.samples_per_node = 2000;
    spec.brain_dim = 8;
    spec.text_dim = 4;
    const Dataset data = generate_synthetic(spec);
    const ModelConfig model = default_model_config(8, 4, 8, 8, 0);
    CrossValidationOptions opt;
    opt.folds = 10;
    opt.ks = {10, 5000};
    opt.model = ModelKind::null;
    const RetrievalReport r = cross_validated_retrieval(data, model, TrainConfig{}, opt);
    CHECK(std::abs(r.text_to_brain.at(10).mean - 5.0) <= 3.0);
    CHECK(std::abs(r.brain_to_text.at(10).mean - 5.0) <= 3.0);
    CHECK(r.text_to_brain.at(10).folds.size() == 10);
    CHECK(r.skipped_k == std::vector<std::size_t>{5000});
    CHECK_FALSE(r.notes.empty());
}

TEST_CASE("cross validation is deterministic and independent of thread count")
{
    SyntheticSpec spec;
    spec.tree_depth = 2;
    spec.branching = 2;
    spec.samples_per_node = 6;
    spec.brain_dim = 16;
    spec.text_dim = 8;
    const Dataset data = generate_synthetic(spec);
    const ModelConfig model = default_model_config(16, 8, 8, 4, 0);
    TrainConfig train;
    train.epochs = 3;
    train.optimizer.lr = 1e-3;
    CrossValidationOptions opt;
    opt.folds = 3;
    opt.ks = {1, 5};
    opt.threads = 1;
    const RetrievalReport a = cross_validated_retrieval(data, model, train, opt);
    opt.threads = 3;
    const RetrievalReport b = cross_validated_retrieval(data, model, train, opt);
    CHECK(a.text_to_brain.at(5).folds == b.text_to_brain.at(5).folds);
    CHECK(a.brain_to_text.at(1).folds == b.brain_to_text.at(1).folds);

    TrainConfig bad = train;
    bad.loss.tau = -1.0;
    CHECK_THROWS_AS(cross_validated_retrieval(data, model, bad, opt), FoldError);
}

TEST_CASE("time components and perfect anti-ordering")
{
    const Curvature<double> c(2.0);
    std::vector<P> pts;
    std::vector<std::uint32_t> counts;
    for (int i = 0; i < 6; ++i) {
        pts.push_back(radial(0.1 + 0.2 * i, 0.3 * i, c));
        counts.push_back(static_cast<std::uint32_t>(20 - 3 * i));
    }
    const auto t = time_components(pts);
    CHECK(t.size() == 6);
    CHECK(t[0] == pts[0].time);
    CHECK(kendall_tau(t, counts) == -1.0);
}

TEST_CASE("poincare export")
{
    const Curvature<double> c(2.0);
    Rng rng(4);
    std::vector<P> pts{origin<double>(5, c)};
    std::vector<std::string> labels{"origin"};
    for (int i = 0; i < 20; ++i) {
        Eigen::VectorXd z(5);
        for (int j = 0; j < 5; ++j)
            z[j] = (j == 3 ? 3.0 : 0.3) * rng.normal();
        pts.push_back(exp_map_origin(TangentVector<double>{z}, c));
        labels.push_back("p" + std::to_string(i));
    }
    const auto xy = poincare_disk_coordinates(pts, c);
    CHECK(xy[0].norm() == 0.0);
    for (const auto& v : xy)
        CHECK(v.norm() < 1.0);

    const fs::path a = temp_path("disk_a.csv"), b = temp_path("disk_b.csv");
    export_poincare(pts, labels, a, c);
    export_poincare(pts, labels, b, c);
    const std::string text = slurp(a);
    CHECK(text == slurp(b));
    CHECK(text.rfind("label,x,y\norigin,0,0\n", 0) == 0);

    const fs::path h = temp_path("hist.csv");
    std::vector<std::uint32_t> counts(pts.size(), 3);
    export_time_histogram(pts, counts, h);
    CHECK(slurp(h).rfind("time,region_count\n", 0) == 0);
    CHECK_THROWS_AS(export_poincare(pts, labels, fs::path("/nonexistent_dir/x.csv"), c), IoError);
}

TEST_CASE("report JSON schema")
{
    const Curvature<double> c(2.0);
    Embeddings emb{random_embeddings(12, 3, c, 1), random_embeddings(12, 3, c, 2)};
    EvalReport rep;
    const std::vector<std::size_t> ks{5, 10, 100};
    rep.retrieval = retrieval_report(emb, ks, c);
    rep.kendall_tau = -0.25;
    BasisScore s;
    s.query = 0;
    s.probabilities = {0.25, 0.75};
    s.top_mask = {false, true};
    rep.basis_scores.push_back(s);
    const nlohmann::json j = nlohmann::json::parse(to_json(rep));
    CHECK(j.contains("recall"));
    CHECK(j["recall"]["text_to_brain"].contains("5"));
    CHECK(j["recall"]["brain_to_text"].contains("10"));
    CHECK(j["tau"] == -0.25);
    CHECK(j["basis_scores"].size() == 1);
    CHECK(j["diagnostics"]["skipped_k"][0] == 100);
    CHECK(to_json(rep) == to_json(rep));

    EvalReport empty;
    CHECK(nlohmann::json::parse(to_json(empty))["tau"].is_null());
}
