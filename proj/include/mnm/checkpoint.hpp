#ifndef MNM_CHECKPOINT_HPP
#define MNM_CHECKPOINT_HPP

#include <filesystem>

#include "mnm/training.hpp"

namespace mnm {

/// Everything needed to resume training or embed new data.
struct Checkpoint {
    TrainConfig train;
    TrainState state;

    ModelConfig model() const { return {state.params.text.config, state.params.brain.config}; }
};

/// Layout (little-endian):
///   "MNMCKPT1", u32 version,
///   u32 x 6 per encoder (text, then brain): input, hidden, output, depth, seed low, seed high,
///   u32 epochs_done, u32 epochs, u32 batch_size, u32 symmetric, u32 seed low, u32 seed high,
///   f64 lr, beta1, beta2, eps, weight_decay, tau, lambda1, lambda2, p, q, c,
///   f64 parameter tensors (text encoder, then brain encoder, declaration order),
///   u64 optimizer step, f64 first moments, f64 second moments.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// FormatError on bad magic, version, truncation or trailing bytes.
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace mnm

#endif
