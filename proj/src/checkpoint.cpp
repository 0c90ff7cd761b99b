#include "mnm/checkpoint.hpp"

#include <cmath>

#include "mnm/binary_io.hpp"
#include "mnm/errors.hpp"

namespace mnm {

namespace {

constexpr std::string_view kCheckpointMagic = "MNMCKPT1";
constexpr std::uint32_t kCheckpointVersion = 1;

void write_seed(io::Writer& w, std::uint64_t seed)
{
    w.u32(static_cast<std::uint32_t>(seed & 0xffffffffu));
    w.u32(static_cast<std::uint32_t>(seed >> 32));
}

std::uint64_t read_seed(io::Reader& r)
{
    const std::uint64_t lo = r.u32();
    const std::uint64_t hi = r.u32();
    return lo | (hi << 32);
}

void write_config(io::Writer& w, const EncoderConfig& c)
{
    w.u32(c.input_dim);
    w.u32(c.hidden_dim);
    w.u32(c.output_dim);
    w.u32(c.depth);
    write_seed(w, c.seed);
}

EncoderConfig read_config(io::Reader& r)
{
    EncoderConfig c;
    c.input_dim = r.u32();
    c.hidden_dim = r.u32();
    c.output_dim = r.u32();
    c.depth = r.u32();
    c.seed = read_seed(r);
    // Guard the allocation below against garbage headers.
    const std::uint64_t weights = std::uint64_t{c.hidden_dim} * (c.input_dim + std::uint64_t{c.depth} * c.hidden_dim) +
                                  std::uint64_t{c.output_dim} * c.hidden_dim;
    if (c.input_dim == 0 || c.hidden_dim == 0 || c.output_dim == 0 || c.depth == 0 ||
        weights * 8 > r.remaining())
        throw FormatError(r.source() + ": encoder configuration inconsistent with file size");
    return c;
}

/// Shapes only; values are overwritten by the reader.
EncoderParams shaped(const EncoderConfig& c)
{
    EncoderParams p;
    p.config = c;
    p.input_weight.resize(c.hidden_dim, c.input_dim);
    p.input_bias.resize(c.hidden_dim);
    p.blocks.resize(c.depth);
    for (auto& b : p.blocks) {
        b.norm.gain.resize(c.hidden_dim);
        b.norm.offset.resize(c.hidden_dim);
        b.weight.resize(c.hidden_dim, c.hidden_dim);
        b.bias.resize(c.hidden_dim);
    }
    p.final_norm.gain.resize(c.hidden_dim);
    p.final_norm.offset.resize(c.hidden_dim);
    p.output_weight.resize(c.output_dim, c.hidden_dim);
    p.output_bias.resize(c.output_dim);
    return p;
}

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path)
{
    const TrainConfig& t = ckpt.train;
    const TrainState& s = ckpt.state;
    io::Writer w;
    w.bytes(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    write_config(w, s.params.text.config);
    write_config(w, s.params.brain.config);
    w.u32(s.epochs_done);
    w.u32(t.epochs);
    w.u32(t.batch_size);
    w.u32(t.loss.symmetric ? 1u : 0u);
    write_seed(w, t.seed);
    for (double v : {t.optimizer.lr, t.optimizer.beta1, t.optimizer.beta2, t.optimizer.eps,
                     t.optimizer.weight_decay, t.loss.tau, t.loss.lambda1, t.loss.lambda2, t.loss.p, t.loss.q,
                     t.loss.c.value()})
        w.f64(v);
    for_each_tensor_dual(s.params, [&](std::span<const double> x, bool) { w.f64s(x); });
    w.u64(s.optimizer.step);
    for (const auto& m : s.optimizer.first_moment)
        w.f64s(std::span(m.data(), static_cast<std::size_t>(m.size())));
    for (const auto& v : s.optimizer.second_moment)
        w.f64s(std::span(v.data(), static_cast<std::size_t>(v.size())));
    w.save(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    io::Reader r = io::Reader::from_file(path);
    if (r.remaining() < kCheckpointMagic.size() || r.bytes(kCheckpointMagic.size()) != kCheckpointMagic)
        throw FormatError(path.string() + ": bad magic (expected MNMCKPT1)");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));

    Checkpoint ckpt;
    TrainConfig& t = ckpt.train;
    TrainState& s = ckpt.state;
    const EncoderConfig text_cfg = read_config(r);
    const EncoderConfig brain_cfg = read_config(r);
    s.epochs_done = r.u32();
    t.epochs = r.u32();
    t.batch_size = r.u32();
    t.loss.symmetric = r.u32() != 0;
    t.seed = read_seed(r);
    t.optimizer.lr = r.f64();
    t.optimizer.beta1 = r.f64();
    t.optimizer.beta2 = r.f64();
    t.optimizer.eps = r.f64();
    t.optimizer.weight_decay = r.f64();
    t.loss.tau = r.f64();
    t.loss.lambda1 = r.f64();
    t.loss.lambda2 = r.f64();
    t.loss.p = r.f64();
    t.loss.q = r.f64();
    try {
        t.loss.c = Curvature<double>(r.f64());
    } catch (const InvalidArgument& e) {
        throw FormatError(path.string() + ": " + e.what());
    }

    s.params.text = shaped(text_cfg);
    s.params.brain = shaped(brain_cfg);
    for_each_tensor_dual(s.params, [&](std::span<double> x, bool) { r.f64s(x); });
    s.optimizer = OptimizerState::zeros_for(s.params);
    s.optimizer.step = r.u64();
    for (auto& m : s.optimizer.first_moment)
        r.f64s(std::span(m.data(), static_cast<std::size_t>(m.size())));
    for (auto& v : s.optimizer.second_moment)
        r.f64s(std::span(v.data(), static_cast<std::size_t>(v.size())));
    r.expect_end();

    bool finite = true;
    for_each_tensor_dual(s.params, [&](std::span<const double> x, bool) {
        for (double v : x)
            finite = finite && std::isfinite(v);
    });
    if (!finite)
        throw ValidationError(path.string() + ": checkpoint contains non-finite parameters");
    return ckpt;
}

} // namespace mnm
