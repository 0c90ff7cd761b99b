#include "mnm/training.hpp"

#include <cmath>
#include <sstream>

#include "mnm/errors.hpp"
#include "mnm/random.hpp"

namespace mnm {

std::vector<std::string> TrainConfig::problems() const
{
    std::vector<std::string> out = loss.problems();
    auto num = [](double v) { std::ostringstream s; s << v; return s.str(); };
    if (epochs == 0)
        out.push_back("epochs: must be positive");
    if (batch_size == 0)
        out.push_back("batch_size: must be positive");
    if (!(optimizer.lr >= 0.0) || !std::isfinite(optimizer.lr))
        out.push_back("lr: must be nonnegative (got " + num(optimizer.lr) + ")");
    if (!(optimizer.weight_decay >= 0.0) || !std::isfinite(optimizer.weight_decay))
        out.push_back("weight_decay: must be nonnegative (got " + num(optimizer.weight_decay) + ")");
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0))
        out.push_back("beta1: must lie in [0, 1) (got " + num(optimizer.beta1) + ")");
    if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
        out.push_back("beta2: must lie in [0, 1) (got " + num(optimizer.beta2) + ")");
    if (!(optimizer.eps > 0.0))
        out.push_back("eps: must be positive (got " + num(optimizer.eps) + ")");
    return out;
}

ModelConfig default_model_config(std::uint32_t brain_dim, std::uint32_t text_dim, std::uint32_t hidden_dim,
                                 std::uint32_t output_dim, std::uint64_t seed)
{
    ModelConfig m;
    m.text = {text_dim, hidden_dim, output_dim, 2, mix_seed(seed, 0x74657874ULL)};
    m.brain = {brain_dim, hidden_dim, output_dim, 3, mix_seed(seed, 0x627261696eULL)};
    return m;
}

OptimizerState OptimizerState::zeros_for(const DualEncoder& params)
{
    OptimizerState s;
    for_each_tensor_dual(params, [&](std::span<const double> t, bool) {
        s.first_moment.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(t.size())));
        s.second_moment.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(t.size())));
    });
    return s;
}

void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                  std::span<double> v, std::uint64_t step, const AdamWOptions& opt, bool decay)
{
    if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size())
        throw InvalidArgument("adamw: parameter, gradient and moment sizes differ");
    if (step == 0)
        throw InvalidArgument("adamw: step index is 1-based");
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
    const double wd = decay ? opt.weight_decay : 0.0;
    for (std::size_t i = 0; i < param.size(); ++i) {
        m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * grad[i];
        v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        param[i] -= opt.lr * (mhat / (std::sqrt(vhat) + opt.eps)) + opt.lr * wd * param[i];
    }
}

void adamw_step(DualEncoder& params, const DualEncoder& grads, OptimizerState& state, const AdamWOptions& opt)
{
    std::vector<std::span<const double>> g;
    for_each_tensor_dual(grads, [&](std::span<const double> t, bool) { g.push_back(t); });
    std::size_t k = 0;
    bool shapes_ok = state.first_moment.size() == g.size() && state.second_moment.size() == g.size();
    for_each_tensor_dual(params, [&](std::span<double> t, bool) {
        shapes_ok = shapes_ok && k < g.size() && g[k].size() == t.size() &&
                    static_cast<std::size_t>(state.first_moment[k].size()) == t.size();
        ++k;
    });
    if (!shapes_ok || k != g.size())
        throw InvalidArgument("adamw: parameter, gradient and optimizer state shapes differ");

    ++state.step;
    k = 0;
    for_each_tensor_dual(params, [&](std::span<double> t, bool decay) {
        auto& m = state.first_moment[k];
        auto& v = state.second_moment[k];
        adamw_update(t, g[k], std::span(m.data(), t.size()), std::span(v.data(), t.size()), state.step, opt, decay);
        ++k;
    });
}

TrainState init_state(const ModelConfig& cfg)
{
    TrainState s;
    s.params.text = init_params(cfg.text);
    s.params.brain = init_params(cfg.brain);
    s.optimizer = OptimizerState::zeros_for(s.params);
    return s;
}

TrainingDiverged::TrainingDiverged(std::uint32_t epoch_, std::size_t batch_, const LossBreakdown& loss_)
    : std::runtime_error([&] {
          std::ostringstream s;
          s << "non-finite loss at epoch " << epoch_ << ", batch " << batch_ << " (angle " << loss_.angle
            << ", centroid " << loss_.centroid << ", hierarchy " << loss_.hierarchy << ", total "
            << loss_.total << ")";
          return s.str();
      }()),
      epoch(epoch_), batch(batch_), loss(loss_)
{
}

namespace {

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, std::span<const std::size_t> rows)
{
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t k = 0; k < rows.size(); ++k)
        out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(rows[k]));
    return out;
}

void check_model_matches(const DualEncoder& model, const Dataset& data)
{
    if (model.brain.config.input_dim != data.brain_dim() || model.text.config.input_dim != data.text_dim())
        throw ValidationError("model expects brain/text widths " + std::to_string(model.brain.config.input_dim) +
                              "/" + std::to_string(model.text.config.input_dim) + " but dataset has " +
                              std::to_string(data.brain_dim()) + "/" + std::to_string(data.text_dim()));
    if (model.brain.config.output_dim != model.text.config.output_dim)
        throw ValidationError("brain and text encoders disagree on the hyperbolic dimension");
}

} // namespace

TrainResult continue_training(const Dataset& data, TrainState state, const TrainConfig& cfg, std::uint32_t epochs,
                              const ProgressSink& sink)
{
    if (data.size() == 0)
        throw InvalidArgument("train: empty dataset");
    if (const auto issues = cfg.problems(); !issues.empty()) {
        std::string msg = "train: invalid configuration:";
        for (const auto& s : issues)
            msg += " " + s + ";";
        throw InvalidArgument(msg);
    }
    check_model_matches(state.params, data);

    TrainResult result;
    const std::size_t n = data.size();
    const std::size_t batch = std::min<std::size_t>(cfg.batch_size, n);
    const Curvature<double> c = cfg.loss.c;

    for (std::uint32_t e = 0; e < epochs; ++e) {
        const std::uint32_t epoch = state.epochs_done + 1;
        Rng rng(cfg.seed, epoch);
        const std::vector<std::size_t> perm = random_permutation(n, rng);
        LossBreakdown acc;
        std::size_t b = 0;
        for (std::size_t start = 0; start < n; start += batch, ++b) {
            const std::span<const std::size_t> rows(perm.data() + start, std::min(batch, n - start));
            std::vector<std::uint32_t> counts;
            counts.reserve(rows.size());
            for (std::size_t r : rows)
                counts.push_back(data.region_counts[r]);

            const EncoderOutput brain = forward(state.params.brain, gather_rows(data.brain, rows), c);
            const EncoderOutput text = forward(state.params.text, gather_rows(data.text, rows), c);
            const LossGradient lg = joint_loss_grad(brain.tangent, text.tangent, counts, cfg.loss);
            if (!std::isfinite(lg.loss.total) || !lg.brain.allFinite() || !lg.text.allFinite())
                throw TrainingDiverged(epoch, b, lg.loss);

            DualEncoder grads;
            grads.brain = backward(state.params.brain, brain.cache, lg.brain).params;
            grads.text = backward(state.params.text, text.cache, lg.text).params;
            adamw_step(state.params, grads, state.optimizer, cfg.optimizer);

            const double w = static_cast<double>(rows.size()) / static_cast<double>(n);
            acc.angle += w * lg.loss.angle;
            acc.centroid += w * lg.loss.centroid;
            acc.hierarchy += w * lg.loss.hierarchy;
            acc.total += w * lg.loss.total;
        }
        state.epochs_done = epoch;
        EpochRecord rec{epoch, acc};
        result.log.push_back(rec);
        if (sink)
            sink(rec);
    }
    result.state = std::move(state);
    return result;
}

TrainResult train(const Dataset& data, const ModelConfig& model, const TrainConfig& cfg, const ProgressSink& sink)
{
    return continue_training(data, init_state(model), cfg, cfg.epochs, sink);
}

Embeddings embed_dataset(const DualEncoder& model, const Dataset& data, Curvature<double> c)
{
    check_model_matches(model, data);
    Embeddings e;
    e.brain = forward(model.brain, data.brain, c).points;
    e.text = forward(model.text, data.text, c).points;
    return e;
}

} // namespace mnm
