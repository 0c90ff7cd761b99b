#ifndef MNM_TRAINING_HPP
#define MNM_TRAINING_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnm/data.hpp"
#include "mnm/encoder.hpp"
#include "mnm/losses.hpp"

namespace mnm {

struct AdamWOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

struct TrainConfig {
    std::uint32_t epochs = 200;
    std::uint32_t batch_size = 4096;
    AdamWOptions optimizer;
    LossConfig loss;
    std::uint64_t seed = 0;

    std::vector<std::string> problems() const;
};

struct ModelConfig {
    EncoderConfig text;
    EncoderConfig brain;
};

/// Two-block text encoder and three-block brain encoder sharing hidden and
/// output widths; encoder seeds are derived from `seed`.
ModelConfig default_model_config(std::uint32_t brain_dim, std::uint32_t text_dim, std::uint32_t hidden_dim = 512,
                                 std::uint32_t output_dim = 64, std::uint64_t seed = 0);

/// Adam moments, one flat vector per parameter tensor in declaration order.
struct OptimizerState {
    std::vector<Eigen::VectorXd> first_moment;
    std::vector<Eigen::VectorXd> second_moment;
    std::uint64_t step = 0;

    static OptimizerState zeros_for(const DualEncoder& params);
};

/// One decoupled-weight-decay Adam update of a single tensor; `step` is the
/// 1-based step index used for bias correction.
void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                  std::span<double> v, std::uint64_t step, const AdamWOptions& opt, bool decay);

/// Advances state.step and updates every tensor. Biases and normalization
/// parameters are not decayed.
void adamw_step(DualEncoder& params, const DualEncoder& grads, OptimizerState& state, const AdamWOptions& opt);

struct TrainState {
    DualEncoder params;
    OptimizerState optimizer;
    std::uint32_t epochs_done = 0;
};

TrainState init_state(const ModelConfig& cfg);

struct EpochRecord {
    std::uint32_t epoch = 0;  ///< 1-based
    LossBreakdown loss;       ///< sample-weighted mean over the epoch's batches
};

using ProgressSink = std::function<void(const EpochRecord&)>;

struct TrainResult {
    TrainState state;
    std::vector<EpochRecord> log;
};

/// Raised when a batch produces a non-finite loss.
class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(std::uint32_t epoch, std::size_t batch, const LossBreakdown& loss);

    std::uint32_t epoch;
    std::size_t batch;
    LossBreakdown loss;
};

TrainResult train(const Dataset& data, const ModelConfig& model, const TrainConfig& cfg,
                  const ProgressSink& sink = {});

/// Runs `epochs` more epochs starting from `state`; shuffling continues from
/// state.epochs_done so a split run matches an uninterrupted one.
TrainResult continue_training(const Dataset& data, TrainState state, const TrainConfig& cfg, std::uint32_t epochs,
                              const ProgressSink& sink = {});

struct Embeddings {
    std::vector<LorentzPoint<double>> brain;
    std::vector<LorentzPoint<double>> text;
};

Embeddings embed_dataset(const DualEncoder& model, const Dataset& data, Curvature<double> c);

} // namespace mnm

#endif
