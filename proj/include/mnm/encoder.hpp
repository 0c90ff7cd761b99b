#ifndef MNM_ENCODER_HPP
#define MNM_ENCODER_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

#include "mnm/geometry.hpp"

namespace mnm {

struct EncoderConfig {
    std::uint32_t input_dim = 0;
    std::uint32_t hidden_dim = 512;
    std::uint32_t output_dim = 64;
    std::uint32_t depth = 2;
    std::uint64_t seed = 0;

    bool operator==(const EncoderConfig&) const = default;
};

struct LayerNormParams {
    Eigen::VectorXd gain;
    Eigen::VectorXd offset;
};

/// h -> h + relu(W * layernorm(h) + b)
struct ResidualBlock {
    LayerNormParams norm;
    Eigen::MatrixXd weight;  ///< hidden x hidden
    Eigen::VectorXd bias;
};

/// Input projection, `depth` residual blocks, a final layer norm and the
/// linear head producing a tangent vector at the hyperboloid origin.
/// The same struct holds parameter gradients.
struct EncoderParams {
    EncoderConfig config;
    Eigen::MatrixXd input_weight;  ///< hidden x input
    Eigen::VectorXd input_bias;
    std::vector<ResidualBlock> blocks;
    LayerNormParams final_norm;
    Eigen::MatrixXd output_weight;  ///< output x hidden
    Eigen::VectorXd output_bias;

    /// Same shapes, all zeros.
    EncoderParams zeros_like() const;
    std::size_t parameter_count() const;
};

/// Visits every tensor in declaration order as a flat span, with a flag telling
/// whether weight decay applies (weight matrices only).
template <typename Params, typename Fn>
void for_each_tensor(Params& p, Fn&& fn)
{
    auto visit = [&](auto& t, bool decay) { fn(std::span(t.data(), static_cast<std::size_t>(t.size())), decay); };
    visit(p.input_weight, true);
    visit(p.input_bias, false);
    for (auto& b : p.blocks) {
        visit(b.norm.gain, false);
        visit(b.norm.offset, false);
        visit(b.weight, true);
        visit(b.bias, false);
    }
    visit(p.final_norm.gain, false);
    visit(p.final_norm.offset, false);
    visit(p.output_weight, true);
    visit(p.output_bias, false);
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit gains.
EncoderParams init_params(const EncoderConfig& cfg);

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
    Eigen::MatrixXd normalized;  ///< (x - mean) * rstd, per row
    Eigen::VectorXd rstd;
};

/// Activations kept by forward() for an exact backward pass.
struct ForwardCache {
    Eigen::MatrixXd input;
    std::vector<Eigen::MatrixXd> hidden;  ///< depth + 1 residual stream states
    std::vector<LayerNormCache> block_norms;
    std::vector<Eigen::MatrixXd> preact;  ///< pre-relu affine outputs
    LayerNormCache final_norm;
    Eigen::MatrixXd features;  ///< final layer norm output
};

struct EncoderOutput {
    Eigen::MatrixXd tangent;  ///< N x d, pre-lift
    std::vector<LorentzPoint<double>> points;
    ForwardCache cache;
};

/// Rows of `inputs` are samples. Throws InvalidArgument on wrong width or
/// non-finite entries.
EncoderOutput forward(const EncoderParams& params, const Eigen::MatrixXd& inputs, Curvature<double> c);

/// Single-sample convenience wrapper.
LorentzPoint<double> embed(const EncoderParams& params, const Eigen::VectorXd& input, Curvature<double> c);

/// Tangent vectors only (no lift, no cache).
Eigen::MatrixXd encode_tangent(const EncoderParams& params, const Eigen::MatrixXd& inputs);

struct EncoderGradients {
    EncoderParams params;
    Eigen::MatrixXd input;  ///< dL/d inputs
};

/// Reverse pass from dL/d tangent (N x d).
EncoderGradients backward(const EncoderParams& params, const ForwardCache& cache,
                          const Eigen::MatrixXd& grad_tangent);

/// Text and brain encoders trained together.
struct DualEncoder {
    EncoderParams text;
    EncoderParams brain;

    DualEncoder zeros_like() const { return {text.zeros_like(), brain.zeros_like()}; }
};

template <typename Dual, typename Fn>
void for_each_tensor_dual(Dual& d, Fn&& fn)
{
    for_each_tensor(d.text, fn);
    for_each_tensor(d.brain, fn);
}

} // namespace mnm

#endif
