#include "mnm/data.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mnm/binary_io.hpp"
#include "mnm/errors.hpp"
#include "mnm/random.hpp"

namespace mnm {

namespace {

constexpr std::string_view kDataMagic = "MNMDATA1";
constexpr std::uint32_t kDataVersion = 1;

Dataset load_jsonl(const std::filesystem::path& path, double delta)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open '" + path.string() + "' for reading");
    std::vector<std::vector<double>> brains, texts;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
            brains.push_back(obj.at("brain").get<std::vector<double>>());
            texts.push_back(obj.at("text").get<std::vector<double>>());
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (brains.empty())
        throw FormatError(path.string() + ": no records");

    Dataset ds;
    ds.delta = delta;
    ds.provenance = "jsonl:" + path.string();
    const auto B = static_cast<Eigen::Index>(brains.front().size());
    const auto T = static_cast<Eigen::Index>(texts.front().size());
    ds.brain.resize(static_cast<Eigen::Index>(brains.size()), B);
    ds.text.resize(static_cast<Eigen::Index>(texts.size()), T);
    for (std::size_t i = 0; i < brains.size(); ++i) {
        if (static_cast<Eigen::Index>(brains[i].size()) != B ||
            static_cast<Eigen::Index>(texts[i].size()) != T)
            throw ValidationError(path.string() + ": record " + std::to_string(i) +
                                  " has inconsistent dimensions");
        const auto r = static_cast<Eigen::Index>(i);
        ds.brain.row(r) = Eigen::Map<const Eigen::RowVectorXd>(brains[i].data(), B);
        ds.text.row(r) = Eigen::Map<const Eigen::RowVectorXd>(texts[i].data(), T);
        ds.region_counts.push_back(compute_region_count(ds.brain.row(r), delta));
    }
    validate(ds);
    return ds;
}

} // namespace

PairedSample Dataset::sample(std::size_t i) const
{
    const auto r = static_cast<Eigen::Index>(i);
    return {brain.row(r).transpose(), text.row(r).transpose(), region_counts.at(i)};
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const
{
    Dataset out;
    out.delta = delta;
    out.provenance = provenance;
    out.brain.resize(static_cast<Eigen::Index>(indices.size()), brain.cols());
    out.text.resize(static_cast<Eigen::Index>(indices.size()), text.cols());
    out.region_counts.reserve(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const auto src = static_cast<Eigen::Index>(indices[k]);
        out.brain.row(static_cast<Eigen::Index>(k)) = brain.row(src);
        out.text.row(static_cast<Eigen::Index>(k)) = text.row(src);
        out.region_counts.push_back(region_counts.at(indices[k]));
    }
    return out;
}

void Dataset::push_back(const PairedSample& s)
{
    if (size() > 0 && (s.brain.size() != brain.cols() || s.text.size() != text.cols()))
        throw InvalidArgument("Dataset::push_back: sample dimensions do not match the dataset");
    const Eigen::Index n = static_cast<Eigen::Index>(size());
    brain.conservativeResize(n + 1, s.brain.size());
    text.conservativeResize(n + 1, s.text.size());
    brain.row(n) = s.brain.transpose();
    text.row(n) = s.text.transpose();
    region_counts.push_back(s.region_count);
}

void validate(const Dataset& ds)
{
    const auto n = static_cast<Eigen::Index>(ds.region_counts.size());
    if (ds.brain.rows() != n || ds.text.rows() != n)
        throw ValidationError("dataset: row counts disagree (brain " + std::to_string(ds.brain.rows()) +
                              ", text " + std::to_string(ds.text.rows()) + ", region counts " +
                              std::to_string(n) + ")");
    if (!std::isfinite(ds.delta))
        throw ValidationError("dataset: delta is not finite");
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!ds.brain.row(i).allFinite() || !ds.text.row(i).allFinite())
            throw ValidationError("dataset: non-finite value in record " + std::to_string(i));
        const std::uint32_t expected = compute_region_count(ds.brain.row(i), ds.delta);
        if (expected != ds.region_counts[static_cast<std::size_t>(i)])
            throw ValidationError("dataset: region count of record " + std::to_string(i) + " is " +
                                  std::to_string(ds.region_counts[static_cast<std::size_t>(i)]) +
                                  " but " + std::to_string(expected) +
                                  " coefficients exceed delta");
    }
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path)
{
    io::Writer w;
    w.bytes(kDataMagic);
    w.u32(kDataVersion);
    w.u32(static_cast<std::uint32_t>(ds.size()));
    w.u32(static_cast<std::uint32_t>(ds.brain_dim()));
    w.u32(static_cast<std::uint32_t>(ds.text_dim()));
    w.f64(ds.delta);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        for (Eigen::Index j = 0; j < ds.brain.cols(); ++j)
            w.f64(ds.brain(r, j));
        for (Eigen::Index j = 0; j < ds.text.cols(); ++j)
            w.f64(ds.text(r, j));
        w.u32(ds.region_counts[i]);
    }
    w.save(path);
}

Dataset load_dataset(const std::filesystem::path& path, double jsonl_delta)
{
    io::Reader r = io::Reader::from_file(path);
    if (r.remaining() < kDataMagic.size() || r.bytes(kDataMagic.size()) != kDataMagic) {
        if (path.extension() == ".jsonl")
            return load_jsonl(path, jsonl_delta);
        throw FormatError(path.string() + ": bad magic (expected MNMDATA1)");
    }
    const std::uint32_t version = r.u32();
    if (version != kDataVersion)
        throw FormatError(path.string() + ": unsupported dataset version " + std::to_string(version));
    const std::uint32_t n = r.u32();
    const std::uint32_t B = r.u32();
    const std::uint32_t T = r.u32();
    const double delta = r.f64();
    const std::uint64_t record_bytes = 8ULL * (std::uint64_t{B} + T) + 4;
    if (record_bytes * n != r.remaining())
        throw FormatError(path.string() + ": payload is " + std::to_string(r.remaining()) +
                          " bytes, header implies " + std::to_string(record_bytes * n));

    Dataset ds;
    ds.delta = delta;
    ds.provenance = "file:" + path.string();
    ds.brain.resize(n, B);
    ds.text.resize(n, T);
    ds.region_counts.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        for (std::uint32_t j = 0; j < B; ++j)
            ds.brain(i, j) = r.f64();
        for (std::uint32_t j = 0; j < T; ++j)
            ds.text(i, j) = r.f64();
        ds.region_counts[i] = r.u32();
    }
    r.expect_end();
    validate(ds);
    return ds;
}

std::size_t SyntheticSpec::node_count() const
{
    std::size_t total = 0, level = 1;
    for (std::uint32_t d = 0; d < tree_depth; ++d) {
        total += level;
        level *= branching;
    }
    return total;
}

SyntheticDataset generate_synthetic_tree(const SyntheticSpec& spec)
{
    if (spec.tree_depth == 0 || spec.branching == 0 || spec.samples_per_node == 0)
        throw InvalidArgument("synthetic spec: depth, branching and samples per node must be positive");
    if (spec.brain_dim == 0 || spec.text_dim == 0)
        throw InvalidArgument("synthetic spec: feature dimensions must be positive");
    if (!(spec.noise_sigma >= 0.0) || !std::isfinite(spec.noise_sigma))
        throw InvalidArgument("synthetic spec: noise sigma must be a nonnegative finite number");

    struct Node {
        std::uint32_t lo, hi;  // support [lo, hi) in brain coordinates
        std::uint32_t level;
        std::int64_t parent;
    };

    // Root covers three quarters of the atlas; each child takes its share of
    // the parent's support minus one coordinate, so supports shrink strictly.
    std::vector<Node> nodes;
    nodes.push_back({0, spec.brain_dim - spec.brain_dim / 4, 0, -1});
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        const Node parent = nodes[k];
        if (parent.level + 1 >= spec.tree_depth)
            continue;
        const std::uint32_t chunk = (parent.hi - parent.lo) / spec.branching;
        if (chunk < 2)
            throw InvalidArgument("synthetic spec: brain_dim " + std::to_string(spec.brain_dim) +
                                  " too small for depth " + std::to_string(spec.tree_depth) +
                                  " and branching " + std::to_string(spec.branching));
        for (std::uint32_t b = 0; b < spec.branching; ++b) {
            const std::uint32_t lo = parent.lo + b * chunk;
            nodes.push_back({lo, lo + chunk - 1, parent.level + 1, static_cast<std::int64_t>(k)});
        }
    }

    Rng proto_rng(spec.seed, 1);
    std::vector<Eigen::VectorXd> prototypes;
    prototypes.reserve(nodes.size());
    for (const Node& node : nodes) {
        Eigen::VectorXd p(spec.text_dim);
        for (Eigen::Index j = 0; j < p.size(); ++j)
            p[j] = proto_rng.normal();
        if (node.parent >= 0)
            p += prototypes[static_cast<std::size_t>(node.parent)];
        prototypes.push_back(std::move(p));
    }

    SyntheticDataset out;
    Dataset& ds = out.data;
    ds.delta = spec.delta;
    ds.provenance = "synthetic(depth=" + std::to_string(spec.tree_depth) +
                    ",branching=" + std::to_string(spec.branching) +
                    ",per_node=" + std::to_string(spec.samples_per_node) +
                    ",seed=" + std::to_string(spec.seed) + ")";
    const auto n = static_cast<Eigen::Index>(nodes.size() * spec.samples_per_node);
    ds.brain.resize(n, spec.brain_dim);
    ds.text.resize(n, spec.text_dim);
    ds.region_counts.reserve(static_cast<std::size_t>(n));

    Rng sample_rng(spec.seed, 2);
    const double active = 2.0 * spec.delta;
    Eigen::Index row = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        out.level_of_node.push_back(nodes[k].level);
        out.parent_of_node.push_back(nodes[k].parent);
        for (std::uint32_t s = 0; s < spec.samples_per_node; ++s, ++row) {
            for (std::uint32_t j = 0; j < spec.brain_dim; ++j) {
                const bool supported = j >= nodes[k].lo && j < nodes[k].hi;
                ds.brain(row, j) = supported ? active : spec.noise_sigma * sample_rng.normal();
            }
            for (std::uint32_t j = 0; j < spec.text_dim; ++j)
                ds.text(row, j) = prototypes[k][j] + spec.noise_sigma * sample_rng.normal();
            ds.region_counts.push_back(compute_region_count(ds.brain.row(row), spec.delta));
            out.node_of_sample.push_back(static_cast<std::uint32_t>(k));
        }
    }
    return out;
}

std::vector<Fold> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed)
{
    if (k == 0 || k > n)
        throw InvalidArgument("kfold_split: need 1 <= k <= n (k = " + std::to_string(k) +
                              ", n = " + std::to_string(n) + ")");
    Rng rng(seed, 0x6b666f6c64ULL);
    const std::vector<std::size_t> perm = random_permutation(n, rng);
    std::vector<Fold> folds(k);
    std::size_t start = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t len = n / k + (f < n % k ? 1 : 0);
        folds[f].test.assign(perm.begin() + static_cast<std::ptrdiff_t>(start),
                             perm.begin() + static_cast<std::ptrdiff_t>(start + len));
        start += len;
    }
    for (std::size_t f = 0; f < k; ++f)
        for (std::size_t g = 0; g < k; ++g)
            if (g != f)
                folds[f].train.insert(folds[f].train.end(), folds[g].test.begin(), folds[g].test.end());
    return folds;
}

} // namespace mnm
