#ifndef MNM_GEOMETRY_HPP
#define MNM_GEOMETRY_HPP

/** \file geometry.hpp
 * \brief Lorentz-model primitives for hyperbolic space of curvature -c.
 *
 * A point is stored as (time, space) with <x,x>_L = -1/c and time > 0.
 * Everything here is a pure function templated on the scalar type, so the
 * same code runs at double precision in production and at long double in
 * the test oracles.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mnm/errors.hpp"

namespace mnm {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Arguments of arcosh/arccos may overshoot their domain by this much before
/// it is treated as a logic error instead of roundoff.
inline constexpr double kDomainGuard = 1e-6;
/// Below this, (c<x,y>)^2 - 1 or ||x_space|| make the exterior angle undefined.
inline constexpr double kDegenerateEps = 1e-12;

/// Magnitude of the (negative) sectional curvature.
template <typename Scalar = double>
class Curvature {
public:
    constexpr Curvature() = default;
    explicit Curvature(Scalar c) : c_(c)
    {
        if (!(c > Scalar(0)) || !std::isfinite(static_cast<double>(c)))
            throw InvalidArgument("curvature must be positive and finite, got " +
                                  std::to_string(static_cast<double>(c)));
    }

    constexpr Scalar value() const noexcept { return c_; }
    Scalar sqrt() const { using std::sqrt; return sqrt(c_); }

private:
    Scalar c_ = Scalar(1);
};

template <typename Scalar = double>
struct LorentzPoint {
    Scalar time = Scalar(1);
    Vector<Scalar> space;

    Eigen::Index dim() const noexcept { return space.size(); }
};

/// Tangent vector at the hyperboloid origin; its time component is always zero.
template <typename Scalar = double>
struct TangentVector {
    Vector<Scalar> space;
};

template <typename Scalar = double>
struct KleinPoint {
    Vector<Scalar> coords;
};

namespace detail {

template <typename A, typename B>
void check_same_dim(const A& a, const B& b, const char* what)
{
    if (a.size() != b.size())
        throw InvalidArgument(std::string(what) + ": dimension mismatch (" +
                              std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
}

} // namespace detail

/// -x0*y0 + <x_space, y_space>
template <typename Scalar>
Scalar lorentz_inner(const LorentzPoint<Scalar>& x, const LorentzPoint<Scalar>& y)
{
    detail::check_same_dim(x.space, y.space, "lorentz_inner");
    return -x.time * y.time + x.space.dot(y.space);
}

template <typename Scalar, typename Derived>
LorentzPoint<Scalar> lift_time(const Eigen::MatrixBase<Derived>& space, Curvature<Scalar> c)
{
    using std::sqrt;
    LorentzPoint<Scalar> p;
    p.space = space;
    p.time = sqrt(Scalar(1) / c.value() + p.space.squaredNorm());
    return p;
}

/// The hyperboloid origin [1/sqrt(c), 0].
template <typename Scalar>
LorentzPoint<Scalar> origin(Eigen::Index dim, Curvature<Scalar> c)
{
    return {Scalar(1) / c.sqrt(), Vector<Scalar>::Zero(dim)};
}

/// Geodesic distance, (1/sqrt(c)) * arcosh(-c<x,y>_L).
///
/// Near the diagonal the arcosh argument is rebuilt from the squared Minkowski
/// norm of x - y, which keeps small distances accurate: arcosh(1 + c*D/2) =
/// 2*asinh(sqrt(c*D)/2).
template <typename Scalar>
Scalar lorentz_distance(const LorentzPoint<Scalar>& x, const LorentzPoint<Scalar>& y,
                        Curvature<Scalar> c)
{
    using std::acosh;
    using std::asinh;
    using std::sqrt;
    const Scalar arg = -c.value() * lorentz_inner(x, y);
    if (arg < Scalar(1) - Scalar(kDomainGuard))
        throw DomainError("lorentz_distance: arcosh argument " +
                          std::to_string(static_cast<double>(arg)) +
                          " below 1; points are off the hyperboloid");
    if (arg > Scalar(2))
        return acosh(arg) / c.sqrt();
    const Scalar dt = x.time - y.time;
    const Scalar sq = std::max(Scalar(0), (x.space - y.space).squaredNorm() - dt * dt);
    return Scalar(2) * asinh(sqrt(c.value() * sq) / Scalar(2)) / c.sqrt();
}

/// sinh(t)/t with the series 1 + t^2/6 below 1e-4.
template <typename Scalar>
Scalar sinhc(Scalar t)
{
    using std::abs;
    using std::sinh;
    if (abs(t) < Scalar(1e-4))
        return Scalar(1) + t * t / Scalar(6);
    return sinh(t) / t;
}

/// Exponential map at the origin; only the space part depends on z.
template <typename Scalar>
LorentzPoint<Scalar> exp_map_origin(const TangentVector<Scalar>& z, Curvature<Scalar> c)
{
    const Scalar scale = sinhc(c.sqrt() * z.space.norm());
    return lift_time(Vector<Scalar>(scale * z.space), c);
}

namespace detail {

/// Exponential map at an arbitrary base point u for an ambient tangent vector
/// z (with <u,z>_L = 0). Only used by tests to cross-check exp_map_origin.
template <typename Scalar>
LorentzPoint<Scalar> exp_map(const LorentzPoint<Scalar>& u, const LorentzPoint<Scalar>& z,
                             Curvature<Scalar> c)
{
    using std::cosh;
    using std::sqrt;
    const Scalar znorm = sqrt(std::max(Scalar(0), lorentz_inner(z, z)));
    const Scalar t = c.sqrt() * znorm;
    const Scalar a = cosh(t);
    const Scalar b = sinhc(t);
    LorentzPoint<Scalar> x;
    x.time = a * u.time + b * z.time;
    x.space = a * u.space + b * z.space;
    return x;
}

} // namespace detail

template <typename Scalar>
KleinPoint<Scalar> lorentz_to_klein(const LorentzPoint<Scalar>& x)
{
    return {x.space / x.time};
}

/// [1, k] / sqrt(c (1 - ||k||^2)). The Klein chart is the open unit ball.
template <typename Scalar>
LorentzPoint<Scalar> klein_to_lorentz(const KleinPoint<Scalar>& k, Curvature<Scalar> c)
{
    using std::sqrt;
    const Scalar sq = k.coords.squaredNorm();
    if (!(sq < Scalar(1)))
        throw DomainError("klein_to_lorentz: point outside the open unit ball (||k||^2 = " +
                          std::to_string(static_cast<double>(sq)) + ")");
    const Scalar scale = Scalar(1) / sqrt(c.value() * (Scalar(1) - sq));
    return {scale, scale * k.coords};
}

/// Lorentz factor of a Klein point, 1/sqrt(1 - ||k||^2).
template <typename Scalar>
Scalar lorentz_factor(const KleinPoint<Scalar>& k)
{
    using std::sqrt;
    return Scalar(1) / sqrt(Scalar(1) - k.coords.squaredNorm());
}

/// Einstein midpoint: gamma-weighted Klein average mapped back to the hyperboloid.
/// Optional weights multiply the Lorentz factors and must be positive.
template <typename Scalar>
LorentzPoint<Scalar> lorentz_centroid(std::span<const LorentzPoint<Scalar>> points,
                                      Curvature<Scalar> c,
                                      std::span<const Scalar> weights = {})
{
    if (points.empty())
        throw InvalidArgument("lorentz_centroid: empty point list");
    if (!weights.empty() && weights.size() != points.size())
        throw InvalidArgument("lorentz_centroid: weight count does not match point count");
    const Eigen::Index dim = points.front().dim();
    Vector<Scalar> acc = Vector<Scalar>::Zero(dim);
    Scalar total(0);
    for (std::size_t j = 0; j < points.size(); ++j) {
        detail::check_same_dim(points[j].space, acc, "lorentz_centroid");
        const Scalar w = weights.empty() ? Scalar(1) : weights[j];
        if (!(w > Scalar(0)))
            throw InvalidArgument("lorentz_centroid: weights must be positive");
        const KleinPoint<Scalar> k = lorentz_to_klein(points[j]);
        const Scalar g = w * lorentz_factor(k);
        acc += g * k.coords;
        total += g;
    }
    return klein_to_lorentz(KleinPoint<Scalar>{acc / total}, c);
}

template <typename Scalar>
LorentzPoint<Scalar> lorentz_centroid(const std::vector<LorentzPoint<Scalar>>& points,
                                      Curvature<Scalar> c)
{
    return lorentz_centroid(std::span<const LorentzPoint<Scalar>>(points), c);
}

/// Exterior angle at `parent` of the geodesic from the origin through
/// `parent`, measured toward `child`. Zero when the child lies further out on
/// the same radial geodesic, pi when it lies between the origin and the parent.
template <typename Scalar>
Scalar exterior_angle(const LorentzPoint<Scalar>& parent, const LorentzPoint<Scalar>& child,
                      Curvature<Scalar> c)
{
    using std::acos;
    using std::sqrt;
    const Scalar w = c.value() * lorentz_inner(parent, child);
    const Scalar gap = w * w - Scalar(1);
    const Scalar pnorm = parent.space.norm();
    if (gap <= Scalar(kDegenerateEps))
        throw DegeneratePair("exterior_angle: coincident or near-coincident points");
    if (pnorm <= Scalar(kDegenerateEps))
        throw DegeneratePair("exterior_angle: parent embedding at the origin");
    const Scalar arg = (child.time + parent.time * w) / (pnorm * sqrt(gap));
    if (arg > Scalar(1) + Scalar(kDomainGuard) || arg < Scalar(-1) - Scalar(kDomainGuard))
        throw DomainError("exterior_angle: arccos argument " +
                          std::to_string(static_cast<double>(arg)) + " outside [-1, 1]");
    return acos(std::clamp(arg, Scalar(-1), Scalar(1)));
}

/// Poincare-ball image space/(1 + sqrt(c)*time); the ball has radius 1/sqrt(c).
template <typename Scalar>
Vector<Scalar> poincare_projection(const LorentzPoint<Scalar>& x, Curvature<Scalar> c)
{
    return x.space / (Scalar(1) + c.sqrt() * x.time);
}

} // namespace mnm

#endif
