#ifndef MNM_LOSSES_HPP
#define MNM_LOSSES_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

#include "mnm/geometry.hpp"

namespace mnm {

/// Index-aligned brain/text embeddings of one batch.
struct BatchEmbeddings {
    std::vector<LorentzPoint<double>> brain;
    std::vector<LorentzPoint<double>> text;
    std::vector<std::uint32_t> region_counts;

    std::size_t size() const noexcept { return brain.size(); }

    /// Lifts N x d tangent matrices through the origin exponential map.
    static BatchEmbeddings from_tangents(const Eigen::MatrixXd& brain_tangent,
                                         const Eigen::MatrixXd& text_tangent,
                                         std::span<const std::uint32_t> region_counts,
                                         Curvature<double> c);
};

struct LossConfig {
    double tau = 0.1;
    double lambda1 = 0.5;
    double lambda2 = 30.0;
    double p = 2.0;
    double q = 0.5;
    /// c = 2 is the smallest curvature for which arcosh(c*q) exists at q = 0.5.
    Curvature<double> c{2.0};
    /// Also contrast each text anchor against all brain candidates.
    bool symmetric = false;

    /// Every violated constraint, one message per key; empty when valid.
    std::vector<std::string> problems() const;
    void validate() const;
};

struct LossBreakdown {
    double angle = 0.0;
    double centroid = 0.0;
    double hierarchy = 0.0;
    double total = 0.0;
};

/// N x N matrix of ext(brain_i, text_j).
Eigen::MatrixXd exterior_angle_matrix(const BatchEmbeddings& batch, Curvature<double> c);

/// InfoNCE over a precomputed N x N exterior-angle matrix (rows = brain
/// anchors, columns = text candidates).
double info_nce_loss(const Eigen::MatrixXd& angles, double tau, bool symmetric = false);

/// InfoNCE over negated exterior angles; each brain anchor is contrasted with
/// every text candidate in the batch.
double angle_loss(const BatchEmbeddings& batch, double tau, Curvature<double> c, bool symmetric = false);

/// |d(O, centroid(text)) - arcosh(c p)/sqrt(c)| + |d(O, centroid(brain)) - arcosh(c q)/sqrt(c)|
double centroid_loss(const BatchEmbeddings& batch, double p, double q, Curvature<double> c);

/// Pairwise penalty for broader activations (larger R) sitting further from
/// the origin (larger time) than narrower ones.
double hierarchy_loss(const BatchEmbeddings& batch);

LossBreakdown joint_loss(const BatchEmbeddings& batch, const LossConfig& cfg);

enum class LossTerm { angle, centroid, hierarchy, joint };

struct LossGradient {
    LossBreakdown loss;
    Eigen::MatrixXd brain;  ///< dL/d brain tangent, N x d
    Eigen::MatrixXd text;   ///< dL/d text tangent, N x d
};

/// Value and gradient of one loss term (or the weighted joint loss) with
/// respect to the pre-lift tangent vectors. `loss` always carries all four
/// values; only the gradient is restricted to `term`.
LossGradient loss_grad(const Eigen::MatrixXd& brain_tangent, const Eigen::MatrixXd& text_tangent,
                       std::span<const std::uint32_t> region_counts, const LossConfig& cfg,
                       LossTerm term = LossTerm::joint);

inline LossGradient joint_loss_grad(const Eigen::MatrixXd& brain_tangent, const Eigen::MatrixXd& text_tangent,
                                    std::span<const std::uint32_t> region_counts, const LossConfig& cfg)
{
    return loss_grad(brain_tangent, text_tangent, region_counts, cfg, LossTerm::joint);
}

namespace detail {

/// Partial derivatives of the exterior angle with time and space treated as
/// independent coordinates. Zero where the arccos argument is clamped.
struct ExteriorAngleGrad {
    double angle = 0.0;
    double parent_time = 0.0;
    Eigen::VectorXd parent_space;
    double child_time = 0.0;
    Eigen::VectorXd child_space;
};

ExteriorAngleGrad exterior_angle_grad(const LorentzPoint<double>& parent, const LorentzPoint<double>& child,
                                      Curvature<double> c);

/// Pulls dL/d(time, space) of a lifted point back to dL/d tangent.
Eigen::VectorXd pullback_to_tangent(const Eigen::VectorXd& tangent, const LorentzPoint<double>& point,
                                    double grad_time, const Eigen::VectorXd& grad_space, Curvature<double> c);

} // namespace detail

} // namespace mnm

#endif
