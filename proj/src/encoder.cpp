#include "mnm/encoder.hpp"

#include <cmath>
#include <string>

#include "mnm/errors.hpp"
#include "mnm/random.hpp"

namespace mnm {

namespace {

Eigen::MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng)
{
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    Eigen::MatrixXd m(rows, cols);
    // Row-major fill so the draw order does not depend on Eigen's storage order.
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            m(i, j) = rng.uniform(-bound, bound);
    return m;
}

LayerNormParams unit_norm(Eigen::Index width)
{
    return {Eigen::VectorXd::Ones(width), Eigen::VectorXd::Zero(width)};
}

Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const LayerNormParams& p, LayerNormCache& cache)
{
    const double width = static_cast<double>(x.cols());
    const Eigen::VectorXd mean = x.rowwise().mean();
    cache.normalized = x.colwise() - mean;
    const Eigen::VectorXd var = cache.normalized.array().square().rowwise().sum() / width;
    cache.rstd = (var.array() + kLayerNormEps).rsqrt();
    cache.normalized.array().colwise() *= cache.rstd.array();
    Eigen::MatrixXd y = cache.normalized.array().rowwise() * p.gain.transpose().array();
    y.rowwise() += p.offset.transpose();
    return y;
}

Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& grad_out, const LayerNormParams& p,
                                    const LayerNormCache& cache, LayerNormParams& grad_p)
{
    const double width = static_cast<double>(grad_out.cols());
    grad_p.gain += (grad_out.array() * cache.normalized.array()).colwise().sum().transpose().matrix();
    grad_p.offset += grad_out.colwise().sum().transpose();
    const Eigen::MatrixXd g = grad_out.array().rowwise() * p.gain.transpose().array();
    const Eigen::VectorXd mean_g = g.rowwise().sum() / width;
    const Eigen::VectorXd mean_gx = (g.array() * cache.normalized.array()).rowwise().sum().matrix() / width;
    Eigen::MatrixXd dx = g.colwise() - mean_g;
    dx -= (cache.normalized.array().colwise() * mean_gx.array()).matrix();
    dx.array().colwise() *= cache.rstd.array();
    return dx;
}

void check_shapes(const EncoderParams& p)
{
    const auto& c = p.config;
    const bool ok = p.input_weight.rows() == c.hidden_dim && p.input_weight.cols() == c.input_dim &&
                    p.input_bias.size() == c.hidden_dim && p.blocks.size() == c.depth &&
                    p.output_weight.rows() == c.output_dim && p.output_weight.cols() == c.hidden_dim &&
                    p.output_bias.size() == c.output_dim && p.final_norm.gain.size() == c.hidden_dim;
    if (!ok)
        throw InvalidArgument("encoder parameters do not match their configuration");
}

} // namespace

EncoderParams EncoderParams::zeros_like() const
{
    EncoderParams z = *this;
    for_each_tensor(z, [](std::span<double> t, bool) { std::fill(t.begin(), t.end(), 0.0); });
    return z;
}

std::size_t EncoderParams::parameter_count() const
{
    std::size_t n = 0;
    for_each_tensor(*this, [&](std::span<const double> t, bool) { n += t.size(); });
    return n;
}

EncoderParams init_params(const EncoderConfig& cfg)
{
    if (cfg.input_dim == 0 || cfg.hidden_dim == 0 || cfg.output_dim == 0 || cfg.depth == 0)
        throw InvalidArgument("encoder config: all dimensions and depth must be positive");
    Rng rng(cfg.seed, 0x656e63ULL);
    EncoderParams p;
    p.config = cfg;
    p.input_weight = uniform_matrix(cfg.hidden_dim, cfg.input_dim, rng);
    p.input_bias = Eigen::VectorXd::Zero(cfg.hidden_dim);
    for (std::uint32_t k = 0; k < cfg.depth; ++k) {
        ResidualBlock b;
        b.norm = unit_norm(cfg.hidden_dim);
        b.weight = uniform_matrix(cfg.hidden_dim, cfg.hidden_dim, rng);
        b.bias = Eigen::VectorXd::Zero(cfg.hidden_dim);
        p.blocks.push_back(std::move(b));
    }
    p.final_norm = unit_norm(cfg.hidden_dim);
    p.output_weight = uniform_matrix(cfg.output_dim, cfg.hidden_dim, rng);
    p.output_bias = Eigen::VectorXd::Zero(cfg.output_dim);
    return p;
}

namespace {

Eigen::MatrixXd run_network(const EncoderParams& params, const Eigen::MatrixXd& inputs, ForwardCache& cache)
{
    check_shapes(params);
    if (inputs.cols() != params.config.input_dim)
        throw InvalidArgument("encoder input has width " + std::to_string(inputs.cols()) +
                              ", expected " + std::to_string(params.config.input_dim));
    if (!inputs.allFinite())
        throw InvalidArgument("encoder input contains non-finite values");

    cache.input = inputs;
    Eigen::MatrixXd h = inputs * params.input_weight.transpose();
    h.rowwise() += params.input_bias.transpose();
    cache.hidden.push_back(h);
    for (const ResidualBlock& b : params.blocks) {
        LayerNormCache nc;
        const Eigen::MatrixXd a = layer_norm(h, b.norm, nc);
        Eigen::MatrixXd z = a * b.weight.transpose();
        z.rowwise() += b.bias.transpose();
        h += z.cwiseMax(0.0);
        cache.block_norms.push_back(std::move(nc));
        cache.preact.push_back(std::move(z));
        cache.hidden.push_back(h);
    }
    cache.features = layer_norm(h, params.final_norm, cache.final_norm);
    Eigen::MatrixXd u = cache.features * params.output_weight.transpose();
    u.rowwise() += params.output_bias.transpose();
    return u;
}

} // namespace

Eigen::MatrixXd encode_tangent(const EncoderParams& params, const Eigen::MatrixXd& inputs)
{
    ForwardCache cache;
    return run_network(params, inputs, cache);
}

EncoderOutput forward(const EncoderParams& params, const Eigen::MatrixXd& inputs, Curvature<double> c)
{
    EncoderOutput out;
    out.tangent = run_network(params, inputs, out.cache);
    out.points.reserve(static_cast<std::size_t>(inputs.rows()));
    for (Eigen::Index i = 0; i < out.tangent.rows(); ++i)
        out.points.push_back(exp_map_origin(TangentVector<double>{out.tangent.row(i).transpose()}, c));
    return out;
}

LorentzPoint<double> embed(const EncoderParams& params, const Eigen::VectorXd& input, Curvature<double> c)
{
    return forward(params, Eigen::MatrixXd(input.transpose()), c).points.front();
}

EncoderGradients backward(const EncoderParams& params, const ForwardCache& cache,
                          const Eigen::MatrixXd& grad_tangent)
{
    check_shapes(params);
    const auto depth = static_cast<std::size_t>(params.config.depth);
    if (cache.hidden.size() != depth + 1 || cache.preact.size() != depth ||
        cache.block_norms.size() != depth || cache.features.cols() != params.config.hidden_dim ||
        cache.input.cols() != params.config.input_dim)
        throw InvalidArgument("encoder backward: cache does not match parameters");
    if (grad_tangent.rows() != cache.features.rows() || grad_tangent.cols() != params.config.output_dim)
        throw InvalidArgument("encoder backward: gradient shape " + std::to_string(grad_tangent.rows()) +
                              "x" + std::to_string(grad_tangent.cols()) + " does not match output");

    EncoderGradients g{params.zeros_like(), {}};
    EncoderParams& gp = g.params;

    gp.output_weight = grad_tangent.transpose() * cache.features;
    gp.output_bias = grad_tangent.colwise().sum().transpose();
    const Eigen::MatrixXd grad_features = grad_tangent * params.output_weight;
    Eigen::MatrixXd grad_h = layer_norm_backward(grad_features, params.final_norm, cache.final_norm, gp.final_norm);

    for (std::size_t k = depth; k-- > 0;) {
        const ResidualBlock& b = params.blocks[k];
        ResidualBlock& gb = gp.blocks[k];
        const Eigen::MatrixXd grad_z = (cache.preact[k].array() > 0.0).select(grad_h, 0.0);
        // Recompute the normalized block input from the cache instead of storing it.
        Eigen::MatrixXd a = cache.block_norms[k].normalized.array().rowwise() * b.norm.gain.transpose().array();
        a.rowwise() += b.norm.offset.transpose();
        gb.weight = grad_z.transpose() * a;
        gb.bias = grad_z.colwise().sum().transpose();
        const Eigen::MatrixXd grad_a = grad_z * b.weight;
        grad_h += layer_norm_backward(grad_a, b.norm, cache.block_norms[k], gb.norm);
    }

    gp.input_weight = grad_h.transpose() * cache.input;
    gp.input_bias = grad_h.colwise().sum().transpose();
    g.input = grad_h * params.input_weight;
    return g;
}

} // namespace mnm
