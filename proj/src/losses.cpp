#include "mnm/losses.hpp"

#include <cmath>
#include <sstream>
#include <string>

#include "mnm/errors.hpp"

namespace mnm {

namespace {

struct Unpacked {
    Eigen::VectorXd time;
    Eigen::MatrixXd space;
};

Unpacked unpack(const std::vector<LorentzPoint<double>>& pts)
{
    Unpacked u;
    const auto n = static_cast<Eigen::Index>(pts.size());
    const Eigen::Index d = pts.empty() ? 0 : pts.front().dim();
    u.time.resize(n);
    u.space.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& p = pts[static_cast<std::size_t>(i)];
        if (p.dim() != d)
            throw InvalidArgument("batch embeddings have mixed dimensions");
        u.time[i] = p.time;
        u.space.row(i) = p.space.transpose();
    }
    return u;
}

void check_batch(const BatchEmbeddings& b)
{
    if (b.brain.empty())
        throw InvalidArgument("loss: empty batch");
    if (b.text.size() != b.brain.size())
        throw InvalidArgument("loss: brain and text batches differ in size");
    if (!b.region_counts.empty() && b.region_counts.size() != b.brain.size())
        throw InvalidArgument("loss: region count list does not match batch size");
}

/// Exterior angles of every (brain_i, text_j) pair together with the
/// coefficients of their partial derivatives.
struct AngleField {
    Eigen::MatrixXd angle;
    Eigen::MatrixXd dangle_darg;  ///< zero where the arccos argument is clamped
    Eigen::MatrixXd darg_dtb;     ///< d arg / d brain_i.time
    Eigen::MatrixXd darg_dtt;     ///< d arg / d text_j.time
    Eigen::MatrixXd alpha;        ///< d arg / d brain_i.space = alpha * sb_i + beta * st_j
    Eigen::MatrixXd beta;         ///< d arg / d text_j.space  = beta * sb_i
};

AngleField angle_field(const Unpacked& brain, const Unpacked& text, Curvature<double> c, bool with_grad)
{
    const double cv = c.value();
    const Eigen::Index n = brain.time.size();
    const Eigen::Index m = text.time.size();
    if (brain.space.cols() != text.space.cols())
        throw InvalidArgument("exterior angle: brain and text dimensions differ");
    const Eigen::MatrixXd w =
        cv * (brain.space * text.space.transpose() - brain.time * text.time.transpose());
    const Eigen::VectorXd nb = brain.space.rowwise().norm();

    AngleField f;
    f.angle.resize(n, m);
    if (with_grad) {
        f.dangle_darg.resize(n, m);
        f.darg_dtb.resize(n, m);
        f.darg_dtt.resize(n, m);
        f.alpha.resize(n, m);
        f.beta.resize(n, m);
    }
    for (Eigen::Index j = 0; j < m; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const double wij = w(i, j);
            const double gap = wij * wij - 1.0;
            if (gap <= kDegenerateEps)
                throw DegeneratePair("exterior angle: coincident or near-coincident pair (brain " +
                                     std::to_string(i) + ", text " + std::to_string(j) + ")");
            if (nb[i] <= kDegenerateEps)
                throw DegeneratePair("exterior angle: brain embedding " + std::to_string(i) +
                                     " at the origin");
            const double q = std::sqrt(gap);
            const double den = nb[i] * q;
            const double tb = brain.time[i];
            const double tt = text.time[j];
            const double arg = (tt + tb * wij) / den;
            if (arg > 1.0 + kDomainGuard || arg < -1.0 - kDomainGuard)
                throw DomainError("exterior angle: arccos argument " + std::to_string(arg) +
                                  " outside [-1, 1]");
            f.angle(i, j) = std::acos(std::clamp(arg, -1.0, 1.0));
            if (!with_grad)
                continue;
            f.dangle_darg(i, j) = std::abs(arg) < 1.0 ? -1.0 / std::sqrt(1.0 - arg * arg) : 0.0;
            const double dw_dtb = -cv * tt;
            const double dw_dtt = -cv * tb;
            const double k = arg * nb[i] * wij / q;  // arg * d den / d w
            f.darg_dtb(i, j) = (wij + tb * dw_dtb - k * dw_dtb) / den;
            f.darg_dtt(i, j) = (1.0 + tb * dw_dtt - k * dw_dtt) / den;
            f.alpha(i, j) = -arg / (nb[i] * nb[i]);
            f.beta(i, j) = cv * (tb - k) / den;
        }
    }
    return f;
}

struct PointGrads {
    Eigen::VectorXd time;
    Eigen::MatrixXd space;

    PointGrads(Eigen::Index n, Eigen::Index d) : time(Eigen::VectorXd::Zero(n)), space(Eigen::MatrixXd::Zero(n, d)) {}
};

/// Row-wise log-softmax cross-entropy of -A/tau against the diagonal,
/// averaged over rows. Writes dL/dA into `grad` scaled by `weight`.
double info_nce_rows(const Eigen::MatrixXd& angle, double tau, double weight, Eigen::MatrixXd* grad)
{
    const Eigen::Index n = angle.rows();
    double loss = 0.0;
    Eigen::VectorXd p(angle.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mx = (-angle.row(i) / tau).maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j < angle.cols(); ++j) {
            p[j] = std::exp(-angle(i, j) / tau - mx);
            z += p[j];
        }
        loss += angle(i, i) / tau + mx + std::log(z);
        if (grad) {
            p /= z;
            for (Eigen::Index j = 0; j < angle.cols(); ++j)
                (*grad)(i, j) += weight * ((i == j ? 1.0 : 0.0) - p[j]) / (tau * static_cast<double>(n));
        }
    }
    return loss / static_cast<double>(n);
}

double angle_value_and_grad(const AngleField& f, double tau, bool symmetric, Eigen::MatrixXd* grad)
{
    if (!(tau > 0.0) || !std::isfinite(tau))
        throw InvalidArgument("angle loss: temperature must be positive");
    if (!symmetric)
        return info_nce_rows(f.angle, tau, 1.0, grad);
    Eigen::MatrixXd grad_t;
    if (grad)
        grad_t = Eigen::MatrixXd::Zero(f.angle.cols(), f.angle.rows());
    const double rows = info_nce_rows(f.angle, tau, 0.5, grad);
    const double cols = info_nce_rows(f.angle.transpose(), tau, 0.5, grad ? &grad_t : nullptr);
    if (grad)
        *grad += grad_t.transpose();
    return 0.5 * (rows + cols);
}

double target_distance(double scale, Curvature<double> c, const char* name)
{
    if (!(c.value() * scale >= 1.0))
        throw InvalidArgument(std::string("centroid loss: c*") + name + " = " +
                              std::to_string(c.value() * scale) + " < 1, target distance undefined");
    return std::acosh(c.value() * scale) / c.sqrt();
}

/// One centroid residual |d(O, centroid) - target| and its gradient.
double centroid_term(const std::vector<LorentzPoint<double>>& pts, const Unpacked& u, double target,
                     Curvature<double> c, double weight, PointGrads* g)
{
    const LorentzPoint<double> centroid = lorentz_centroid(std::span<const LorentzPoint<double>>(pts), c);
    const double dist = lorentz_distance(origin(centroid.dim(), c), centroid, c);
    const double residual = dist - target;
    if (g && residual != 0.0) {
        // The Einstein midpoint reduces to the Klein point sum(space)/sum(time),
        // and d(O, .) of a Klein point k is atanh(|k|)/sqrt(c).
        const double total_time = u.time.sum();
        const Eigen::VectorXd m = u.space.colwise().sum().transpose() / total_time;
        const double r = m.norm();
        if (r > 0.0) {
            const double sign = residual > 0.0 ? 1.0 : -1.0;
            const Eigen::VectorXd grad_m = (weight * sign / (r * (1.0 - r * r) * c.sqrt())) * m;
            g->space.rowwise() += (grad_m / total_time).transpose();
            g->time.array() -= grad_m.dot(m) / total_time;
        }
    }
    return std::abs(residual);
}

double hierarchy_value_and_grad(const Eigen::VectorXd& brain_time, std::span<const std::uint32_t> r,
                                double weight, Eigen::VectorXd* grad_time)
{
    const auto n = static_cast<Eigen::Index>(r.size());
    if (brain_time.size() != n)
        throw InvalidArgument("hierarchy loss: region count list does not match batch size");
    const double norm = 1.0 / (static_cast<double>(n) * static_cast<double>(n));
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const auto ri = r[static_cast<std::size_t>(i)];
            const auto rj = r[static_cast<std::size_t>(j)];
            if (ri <= rj)
                continue;
            const double gap = static_cast<double>(ri - rj);
            const double lr = std::log(brain_time[i] / brain_time[j]);
            if (lr <= 0.0)
                continue;
            total += gap * lr;
            if (grad_time) {
                (*grad_time)[i] += weight * norm * gap / brain_time[i];
                (*grad_time)[j] -= weight * norm * gap / brain_time[j];
            }
        }
    }
    return total * norm;
}

} // namespace

BatchEmbeddings BatchEmbeddings::from_tangents(const Eigen::MatrixXd& brain_tangent,
                                               const Eigen::MatrixXd& text_tangent,
                                               std::span<const std::uint32_t> region_counts,
                                               Curvature<double> c)
{
    BatchEmbeddings b;
    b.region_counts.assign(region_counts.begin(), region_counts.end());
    for (Eigen::Index i = 0; i < brain_tangent.rows(); ++i)
        b.brain.push_back(exp_map_origin(TangentVector<double>{brain_tangent.row(i).transpose()}, c));
    for (Eigen::Index i = 0; i < text_tangent.rows(); ++i)
        b.text.push_back(exp_map_origin(TangentVector<double>{text_tangent.row(i).transpose()}, c));
    return b;
}

std::vector<std::string> LossConfig::problems() const
{
    std::vector<std::string> out;
    auto num = [](double v) { std::ostringstream s; s << v; return s.str(); };
    if (!(tau > 0.0) || !std::isfinite(tau))
        out.push_back("tau: must be positive (got " + num(tau) + ")");
    if (!(lambda1 >= 0.0) || !std::isfinite(lambda1))
        out.push_back("lambda1: must be nonnegative (got " + num(lambda1) + ")");
    if (!(lambda2 >= 0.0) || !std::isfinite(lambda2))
        out.push_back("lambda2: must be nonnegative (got " + num(lambda2) + ")");
    if (!(p > q))
        out.push_back("p: must exceed q (got p=" + num(p) + ", q=" + num(q) + ")");
    if (!(c.value() * p >= 1.0))
        out.push_back("p: c*p must be at least 1 (got " + num(c.value() * p) + ")");
    if (!(c.value() * q >= 1.0))
        out.push_back("q: c*q must be at least 1 (got " + num(c.value() * q) + ")");
    return out;
}

void LossConfig::validate() const
{
    const auto issues = problems();
    if (issues.empty())
        return;
    std::string msg = "invalid loss configuration:";
    for (const auto& s : issues)
        msg += " " + s + ";";
    throw InvalidArgument(msg);
}

double info_nce_loss(const Eigen::MatrixXd& angles, double tau, bool symmetric)
{
    if (angles.rows() == 0 || angles.rows() != angles.cols())
        throw InvalidArgument("angle loss: angle matrix must be square and non-empty");
    AngleField f;
    f.angle = angles;
    return angle_value_and_grad(f, tau, symmetric, nullptr);
}

Eigen::MatrixXd exterior_angle_matrix(const BatchEmbeddings& batch, Curvature<double> c)
{
    check_batch(batch);
    return angle_field(unpack(batch.brain), unpack(batch.text), c, false).angle;
}

double angle_loss(const BatchEmbeddings& batch, double tau, Curvature<double> c, bool symmetric)
{
    check_batch(batch);
    if (!(tau > 0.0))
        throw InvalidArgument("angle loss: temperature must be positive");
    const AngleField f = angle_field(unpack(batch.brain), unpack(batch.text), c, false);
    return angle_value_and_grad(f, tau, symmetric, nullptr);
}

double centroid_loss(const BatchEmbeddings& batch, double p, double q, Curvature<double> c)
{
    check_batch(batch);
    if (!(p > q))
        throw InvalidArgument("centroid loss: p must exceed q");
    const double text_target = target_distance(p, c, "p");
    const double brain_target = target_distance(q, c, "q");
    return centroid_term(batch.text, unpack(batch.text), text_target, c, 1.0, nullptr) +
           centroid_term(batch.brain, unpack(batch.brain), brain_target, c, 1.0, nullptr);
}

double hierarchy_loss(const BatchEmbeddings& batch)
{
    check_batch(batch);
    return hierarchy_value_and_grad(unpack(batch.brain).time, batch.region_counts, 1.0, nullptr);
}

LossBreakdown joint_loss(const BatchEmbeddings& batch, const LossConfig& cfg)
{
    cfg.validate();
    LossBreakdown out;
    out.angle = angle_loss(batch, cfg.tau, cfg.c, cfg.symmetric);
    out.centroid = centroid_loss(batch, cfg.p, cfg.q, cfg.c);
    out.hierarchy = hierarchy_loss(batch);
    out.total = out.angle + cfg.lambda1 * out.centroid + cfg.lambda2 * out.hierarchy;
    return out;
}

LossGradient loss_grad(const Eigen::MatrixXd& brain_tangent, const Eigen::MatrixXd& text_tangent,
                       std::span<const std::uint32_t> region_counts, const LossConfig& cfg, LossTerm term)
{
    cfg.validate();
    if (brain_tangent.rows() != text_tangent.rows() || brain_tangent.cols() != text_tangent.cols())
        throw InvalidArgument("loss gradient: brain and text tangent batches differ in shape");
    if (static_cast<Eigen::Index>(region_counts.size()) != brain_tangent.rows())
        throw InvalidArgument("loss gradient: region count list does not match batch size");

    const Curvature<double> c = cfg.c;
    const BatchEmbeddings batch = BatchEmbeddings::from_tangents(brain_tangent, text_tangent, region_counts, c);
    check_batch(batch);
    const Unpacked brain = unpack(batch.brain);
    const Unpacked text = unpack(batch.text);
    const Eigen::Index n = brain.time.size();
    const Eigen::Index d = brain.space.cols();

    const bool want_angle = term == LossTerm::angle || term == LossTerm::joint;
    const double w_cent = term == LossTerm::centroid ? 1.0 : term == LossTerm::joint ? cfg.lambda1 : 0.0;
    const double w_hier = term == LossTerm::hierarchy ? 1.0 : term == LossTerm::joint ? cfg.lambda2 : 0.0;

    PointGrads gb(n, d), gt(n, d);
    LossGradient out;

    const AngleField f = angle_field(brain, text, c, want_angle);
    Eigen::MatrixXd dl_dangle;
    if (want_angle)
        dl_dangle = Eigen::MatrixXd::Zero(n, n);
    out.loss.angle = angle_value_and_grad(f, cfg.tau, cfg.symmetric, want_angle ? &dl_dangle : nullptr);
    if (want_angle) {
        const Eigen::MatrixXd g = dl_dangle.cwiseProduct(f.dangle_darg);
        const Eigen::MatrixXd gbeta = g.cwiseProduct(f.beta);
        gb.time += g.cwiseProduct(f.darg_dtb).rowwise().sum();
        gt.time += g.cwiseProduct(f.darg_dtt).colwise().sum().transpose();
        const Eigen::VectorXd galpha = g.cwiseProduct(f.alpha).rowwise().sum();
        gb.space += (brain.space.array().colwise() * galpha.array()).matrix() + gbeta * text.space;
        gt.space += gbeta.transpose() * brain.space;
    }

    const double text_target = target_distance(cfg.p, c, "p");
    const double brain_target = target_distance(cfg.q, c, "q");
    const bool want_cent = w_cent != 0.0;
    out.loss.centroid = centroid_term(batch.text, text, text_target, c, w_cent, want_cent ? &gt : nullptr) +
                        centroid_term(batch.brain, brain, brain_target, c, w_cent, want_cent ? &gb : nullptr);

    out.loss.hierarchy = hierarchy_value_and_grad(brain.time, region_counts, w_hier,
                                                  w_hier != 0.0 ? &gb.time : nullptr);
    out.loss.total = out.loss.angle + cfg.lambda1 * out.loss.centroid + cfg.lambda2 * out.loss.hierarchy;

    out.brain.resize(n, d);
    out.text.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        out.brain.row(i) = detail::pullback_to_tangent(brain_tangent.row(i).transpose(), batch.brain[k],
                                                       gb.time[i], gb.space.row(i).transpose(), c)
                               .transpose();
        out.text.row(i) = detail::pullback_to_tangent(text_tangent.row(i).transpose(), batch.text[k],
                                                      gt.time[i], gt.space.row(i).transpose(), c)
                              .transpose();
    }
    return out;
}

namespace detail {

ExteriorAngleGrad exterior_angle_grad(const LorentzPoint<double>& parent, const LorentzPoint<double>& child,
                                      Curvature<double> c)
{
    const Unpacked p = unpack({parent});
    const Unpacked q = unpack({child});
    const AngleField f = angle_field(p, q, c, true);
    const double g = f.dangle_darg(0, 0);
    ExteriorAngleGrad out;
    out.angle = f.angle(0, 0);
    out.parent_time = g * f.darg_dtb(0, 0);
    out.child_time = g * f.darg_dtt(0, 0);
    out.parent_space = g * (f.alpha(0, 0) * parent.space + f.beta(0, 0) * child.space);
    out.child_space = g * f.beta(0, 0) * parent.space;
    return out;
}

Eigen::VectorXd pullback_to_tangent(const Eigen::VectorXd& tangent, const LorentzPoint<double>& point,
                                    double grad_time, const Eigen::VectorXd& grad_space, Curvature<double> c)
{
    // time = sqrt(1/c + |s|^2)  =>  d time / d s = s / time
    const Eigen::VectorXd gs = grad_space + (grad_time / point.time) * point.space;
    // s = sinhc(sqrt(c) |u|) u  =>  ds/du = f I + h u u^T,
    // h = c (x cosh x - sinh x) / x^3 with x = sqrt(c) |u|.
    const double x = c.sqrt() * tangent.norm();
    const double f = sinhc(x);
    const double cubic = x < 1e-3 ? 1.0 / 3.0 + x * x / 30.0 + x * x * x * x / 840.0
                                  : (x * std::cosh(x) - std::sinh(x)) / (x * x * x);
    const double h = c.value() * cubic;
    return f * gs + (h * tangent.dot(gs)) * tangent;
}

} // namespace detail

} // namespace mnm
