#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <numbers>

#include "mnm/errors.hpp"
#include "mnm/losses.hpp"
#include "mnm/random.hpp"

using namespace mnm;

namespace {

using P = LorentzPoint<double>;

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale)
{
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            m(i, j) = scale * rng.normal();
    return m;
}

std::vector<std::uint32_t> random_counts(Rng& rng, std::size_t n)
{
    std::vector<std::uint32_t> r(n);
    for (auto& v : r)
        v = static_cast<std::uint32_t>(rng.below(12));
    return r;
}

P point_at(double time, Eigen::Index dim, double c = 1.0)
{
    // A point with the requested time component on the first axis.
    Eigen::VectorXd s = Eigen::VectorXd::Zero(dim);
    s[0] = std::sqrt(time * time - 1.0 / c);
    return P{time, s};
}

double term_value(const LossBreakdown& b, LossTerm term)
{
    switch (term) {
    case LossTerm::angle: return b.angle;
    case LossTerm::centroid: return b.centroid;
    case LossTerm::hierarchy: return b.hierarchy;
    case LossTerm::joint: return b.total;
    }
    return 0.0;
}

// Reference loss: lift the tangents and evaluate the forward definitions.
double reference_loss(const Eigen::MatrixXd& bt, const Eigen::MatrixXd& tt, const std::vector<std::uint32_t>& r,
                      const LossConfig& cfg, LossTerm term)
{
    const BatchEmbeddings batch = BatchEmbeddings::from_tangents(bt, tt, r, cfg.c);
    return term_value(joint_loss(batch, cfg), term);
}

struct FdResult {
    double worst = 0.0;
    std::size_t checked = 0;
};

// Central differences with step 1e-5, compared elementwise.
FdResult finite_difference_check(const Eigen::MatrixXd& bt, const Eigen::MatrixXd& tt,
                                 const std::vector<std::uint32_t>& r, const LossConfig& cfg, LossTerm term)
{
    const double h = 1e-5;
    const LossGradient g = loss_grad(bt, tt, r, cfg, term);
    FdResult res;
    auto probe = [&](Eigen::MatrixXd& m, const Eigen::MatrixXd& analytic, bool is_brain) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                const double keep = m(i, j);
                m(i, j) = keep + h;
                const double up = is_brain ? reference_loss(m, tt, r, cfg, term) : reference_loss(bt, m, r, cfg, term);
                m(i, j) = keep - h;
                const double down =
                    is_brain ? reference_loss(m, tt, r, cfg, term) : reference_loss(bt, m, r, cfg, term);
                m(i, j) = keep;
                const double fd = (up - down) / (2.0 * h);
                const double err = std::abs(fd - analytic(i, j)) / std::max({std::abs(fd), std::abs(analytic(i, j)), 1e-6});
                res.worst = std::max(res.worst, err);
                ++res.checked;
            }
    };
    Eigen::MatrixXd b = bt, t = tt;
    probe(b, g.brain, true);
    probe(t, g.text, false);
    return res;
}

} // namespace

TEST_CASE("angle loss closed forms")
{
    const Curvature<double> c(1.0);
    Rng rng(1);
    const Eigen::MatrixXd bt = random_matrix(rng, 1, 3, 0.8), tt = random_matrix(rng, 1, 3, 0.8);
    const BatchEmbeddings one = BatchEmbeddings::from_tangents(bt, tt, std::vector<std::uint32_t>{1}, c);
    CHECK(angle_loss(one, 0.1, c) == 0.0);

    Eigen::MatrixXd a(2, 2);
    a << 0.1, 2.0, 2.0, 0.1;
    const double row = -std::log(std::exp(-0.1) / (std::exp(-0.1) + std::exp(-2.0)));
    CHECK(info_nce_loss(a, 1.0) == doctest::Approx(row).epsilon(1e-14));
    // Hand evaluation: e^-0.1 = 0.904837, e^-2 = 0.135335, -log(0.869892) = 0.139387.
    CHECK(info_nce_loss(a, 1.0) == doctest::Approx(0.139387).epsilon(1e-5));
    CHECK_THROWS_AS(info_nce_loss(a, 0.0), InvalidArgument);
    CHECK_THROWS_AS(angle_loss(one, -1.0, c), InvalidArgument);
}

TEST_CASE("angle loss matches the exterior angle matrix and is permutation invariant")
{
    const Curvature<double> c(2.0);
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index n = 5, d = 4;
        const Eigen::MatrixXd bt = random_matrix(rng, n, d, 0.7), tt = random_matrix(rng, n, d, 0.7);
        const auto r = random_counts(rng, n);
        const BatchEmbeddings batch = BatchEmbeddings::from_tangents(bt, tt, r, c);
        const Eigen::MatrixXd ext = exterior_angle_matrix(batch, c);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
                CHECK(ext(i, j) == doctest::Approx(exterior_angle(batch.brain[i], batch.text[j], c)).epsilon(1e-12));

        // Reference InfoNCE written out directly.
        double ref = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            double z = 0.0;
            for (Eigen::Index j = 0; j < n; ++j)
                z += std::exp(-ext(i, j) / 0.1);
            ref -= std::log(std::exp(-ext(i, i) / 0.1) / z);
        }
        ref /= static_cast<double>(n);
        const double loss = angle_loss(batch, 0.1, c);
        CHECK(loss == doctest::Approx(ref).epsilon(1e-10));
        CHECK(loss > 0.0);

        const std::vector<Eigen::Index> perm{3, 0, 4, 1, 2};
        BatchEmbeddings shuffled;
        for (Eigen::Index k : perm) {
            shuffled.brain.push_back(batch.brain[k]);
            shuffled.text.push_back(batch.text[k]);
            shuffled.region_counts.push_back(batch.region_counts[k]);
        }
        CHECK(std::abs(angle_loss(shuffled, 0.1, c) - loss) <= 1e-12);

        // Shared planar rotation of the space coordinates.
        Eigen::MatrixXd rot = Eigen::MatrixXd::Identity(d, d);
        const double th = 0.37 * (trial + 1);
        rot(0, 0) = std::cos(th);
        rot(0, 1) = -std::sin(th);
        rot(1, 0) = std::sin(th);
        rot(1, 1) = std::cos(th);
        const BatchEmbeddings rotated =
            BatchEmbeddings::from_tangents(bt * rot.transpose(), tt * rot.transpose(), r, c);
        CHECK(std::abs(angle_loss(rotated, 0.1, c) - loss) <= 1e-9);
        CHECK(std::abs(centroid_loss(rotated, 2.0, 0.5, c) - centroid_loss(batch, 2.0, 0.5, c)) <= 1e-9);
    }
}

TEST_CASE("symmetric angle loss averages both directions")
{
    Eigen::MatrixXd a(3, 3);
    a << 0.2, 1.0, 2.5, 0.7, 0.3, 1.1, 2.0, 0.4, 0.9;
    const double rows = info_nce_loss(a, 0.5);
    const double cols = info_nce_loss(a.transpose(), 0.5);
    CHECK(info_nce_loss(a, 0.5, true) == doctest::Approx(0.5 * (rows + cols)).epsilon(1e-14));
}

TEST_CASE("centroid loss")
{
    const Curvature<double> c1(1.0);
    const Eigen::MatrixXd zeros = Eigen::MatrixXd::Zero(3, 2);
    const BatchEmbeddings at_origin = BatchEmbeddings::from_tangents(zeros, zeros, std::vector<std::uint32_t>{1, 2, 3}, c1);
    CHECK(centroid_loss(at_origin, 2.0, 1.0, c1) == doctest::Approx(std::log(2.0 + std::sqrt(3.0))).epsilon(1e-14));
    CHECK(centroid_loss(at_origin, 2.0, 1.0, c1) == doctest::Approx(1.31696).epsilon(1e-5));

    // c*q < 1 leaves the brain target undefined.
    CHECK_THROWS_AS(centroid_loss(at_origin, 2.0, 0.5, c1), InvalidArgument);
    CHECK_THROWS_AS(centroid_loss(at_origin, 0.5, 0.4, Curvature<double>(1.5)), InvalidArgument);
    CHECK_THROWS_AS(centroid_loss(at_origin, 1.0, 2.0, Curvature<double>(1.0)), InvalidArgument);

    // Both centroids placed at their target distances.
    const Curvature<double> c(2.0);
    const double text_target = std::acosh(2.0 * 2.0) / c.sqrt();
    const double brain_target = std::acosh(2.0 * 0.75) / c.sqrt();
    Eigen::MatrixXd bt = Eigen::MatrixXd::Zero(1, 3), tt = Eigen::MatrixXd::Zero(1, 3);
    bt(0, 1) = brain_target;
    tt(0, 2) = text_target;
    const BatchEmbeddings exact = BatchEmbeddings::from_tangents(bt, tt, std::vector<std::uint32_t>{4}, c);
    CHECK(centroid_loss(exact, 2.0, 0.75, c) <= 1e-12);
}

TEST_CASE("hierarchy loss")
{
    auto batch_with_times = [](std::vector<double> times, std::vector<std::uint32_t> r) {
        BatchEmbeddings b;
        for (double t : times) {
            b.brain.push_back(point_at(t, 2));
            b.text.push_back(point_at(t, 2));
        }
        b.region_counts = std::move(r);
        return b;
    };
    CHECK(hierarchy_loss(batch_with_times({2.0, 1.0}, {3, 1})) == doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-15));
    CHECK(std::abs(hierarchy_loss(batch_with_times({2.0, 1.0}, {3, 1})) - 0.346574) <= 1e-6);
    CHECK(hierarchy_loss(batch_with_times({1.0, 2.0}, {3, 1})) == 0.0);
    CHECK(hierarchy_loss(batch_with_times({1.3, 2.0, 1.1}, {4, 4, 4})) == 0.0);

    // Linear in the region counts.
    const double base = hierarchy_loss(batch_with_times({1.7, 1.2, 3.0, 1.05}, {5, 2, 7, 1}));
    CHECK(base > 0.0);
    CHECK(hierarchy_loss(batch_with_times({1.7, 1.2, 3.0, 1.05}, {15, 6, 21, 3})) == doctest::Approx(3.0 * base).epsilon(1e-14));
}

TEST_CASE("joint loss decomposition")
{
    Rng rng(3);
    LossConfig cfg;
    const Eigen::MatrixXd bt = random_matrix(rng, 6, 4, 0.6), tt = random_matrix(rng, 6, 4, 0.6);
    const auto r = random_counts(rng, 6);
    const BatchEmbeddings batch = BatchEmbeddings::from_tangents(bt, tt, r, cfg.c);
    const LossBreakdown b = joint_loss(batch, cfg);
    CHECK(std::abs(b.total - (b.angle + 0.5 * b.centroid + 30.0 * b.hierarchy)) <= 1e-12 * std::abs(b.total));
    CHECK(b.angle == doctest::Approx(angle_loss(batch, cfg.tau, cfg.c)).epsilon(1e-15));

    LossConfig plain = cfg;
    plain.lambda1 = 0.0;
    plain.lambda2 = 0.0;
    const LossBreakdown p = joint_loss(batch, plain);
    CHECK(p.total == p.angle);

    CHECK(cfg.lambda1 == 0.5);
    CHECK(cfg.lambda2 == 30.0);
    CHECK(cfg.p == 2.0);
    CHECK(cfg.q == 0.5);
    CHECK(cfg.problems().empty());
}

TEST_CASE("loss config reports every invalid key")
{
    LossConfig cfg;
    cfg.tau = 0.0;
    cfg.lambda1 = -1.0;
    cfg.p = 0.1;
    const auto problems = cfg.problems();
    CHECK(problems.size() >= 3);
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("gradients match central finite differences")
{
    Rng rng(4);
    for (LossTerm term : {LossTerm::angle, LossTerm::centroid, LossTerm::hierarchy, LossTerm::joint}) {
        for (int trial = 0; trial < 6; ++trial) {
            const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.below(7));
            const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng.below(7));
            LossConfig cfg;
            cfg.symmetric = trial % 2 == 1;
            cfg.c = Curvature<double>(trial < 3 ? 2.0 : 3.5);
            const Eigen::MatrixXd bt = random_matrix(rng, n, d, 0.6), tt = random_matrix(rng, n, d, 0.6);
            const auto r = random_counts(rng, static_cast<std::size_t>(n));
            const FdResult res = finite_difference_check(bt, tt, r, cfg, term);
            INFO("term " << static_cast<int>(term) << " n=" << n << " d=" << d);
            CHECK(res.worst <= 1e-4);
        }
    }
}

TEST_CASE("spec batch N=4, d=3 gradient and denominator coupling")
{
    Rng rng(5);
    LossConfig cfg;
    const Eigen::MatrixXd bt = random_matrix(rng, 4, 3, 0.6), tt = random_matrix(rng, 4, 3, 0.6);
    const std::vector<std::uint32_t> r{3, 7, 1, 5};
    CHECK(finite_difference_check(bt, tt, r, cfg, LossTerm::joint).worst <= 1e-4);
    // Each text vector also appears in other rows' denominators.
    const LossGradient g = loss_grad(bt, tt, r, cfg, LossTerm::angle);
    for (Eigen::Index i = 0; i < 4; ++i)
        CHECK(g.text.row(i).norm() > 0.0);
}

TEST_CASE("hierarchy gradient vanishes with equal region counts")
{
    Rng rng(6);
    LossConfig cfg;
    const Eigen::MatrixXd bt = random_matrix(rng, 5, 3, 0.6), tt = random_matrix(rng, 5, 3, 0.6);
    const LossGradient g = loss_grad(bt, tt, std::vector<std::uint32_t>(5, 4), cfg, LossTerm::hierarchy);
    CHECK(g.brain.norm() == 0.0);
    CHECK(g.text.norm() == 0.0);
    CHECK(g.loss.hierarchy == 0.0);
}

TEST_CASE("exterior angle partials match finite differences in the ambient coordinates")
{
    Rng rng(7);
    const Curvature<double> c(1.5);
    const double h = 1e-6;
    for (int trial = 0; trial < 20; ++trial) {
        const P a = lift_time(random_matrix(rng, 3, 1, 0.8).col(0).eval(), c);
        const P b = lift_time(random_matrix(rng, 3, 1, 0.8).col(0).eval(), c);
        const detail::ExteriorAngleGrad g = detail::exterior_angle_grad(a, b, c);
        // Treat time and space as free coordinates: evaluate the closed form
        // off the hyperboloid.
        auto f = [&](const P& pa, const P& pb) {
            const double w = c.value() * lorentz_inner(pa, pb);
            return std::acos((pb.time + pa.time * w) / (pa.space.norm() * std::sqrt(w * w - 1.0)));
        };
        P up = a, dn = a;
        up.time += h;
        dn.time -= h;
        CHECK(g.parent_time == doctest::Approx((f(up, b) - f(dn, b)) / (2 * h)).epsilon(1e-5));
        up = b;
        dn = b;
        up.time += h;
        dn.time -= h;
        CHECK(g.child_time == doctest::Approx((f(a, up) - f(a, dn)) / (2 * h)).epsilon(1e-5));
        for (int k = 0; k < 3; ++k) {
            P su = a, sd = a;
            su.space[k] += h;
            sd.space[k] -= h;
            CHECK(g.parent_space[k] == doctest::Approx((f(su, b) - f(sd, b)) / (2 * h)).epsilon(1e-5));
            P cu = b, cd = b;
            cu.space[k] += h;
            cd.space[k] -= h;
            CHECK(g.child_space[k] == doctest::Approx((f(a, cu) - f(a, cd)) / (2 * h)).epsilon(1e-5));
        }
    }
}

TEST_CASE("degenerate pairs propagate")
{
    const Curvature<double> c(2.0);
    const Eigen::MatrixXd same = Eigen::MatrixXd::Constant(2, 2, 0.3);
    const BatchEmbeddings b = BatchEmbeddings::from_tangents(same, same, std::vector<std::uint32_t>{1, 2}, c);
    CHECK_THROWS_AS(angle_loss(b, 0.1, c), DegeneratePair);
}
