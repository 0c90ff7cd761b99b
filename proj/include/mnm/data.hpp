#ifndef MNM_DATA_HPP
#define MNM_DATA_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mnm {

/// Default activation threshold for counting regions.
inline constexpr double kDefaultDelta = 5.0;

struct PairedSample {
    Eigen::VectorXd brain;
    Eigen::VectorXd text;
    std::uint32_t region_count = 0;
};

/// Paired brain/text feature vectors, one row per article.
struct Dataset {
    Eigen::MatrixXd brain;  ///< N x B atlas coefficients
    Eigen::MatrixXd text;   ///< N x T text features
    std::vector<std::uint32_t> region_counts;
    double delta = kDefaultDelta;
    std::string provenance;

    std::size_t size() const noexcept { return region_counts.size(); }
    Eigen::Index brain_dim() const noexcept { return brain.cols(); }
    Eigen::Index text_dim() const noexcept { return text.cols(); }

    PairedSample sample(std::size_t i) const;
    /// Rows `indices`, in that order.
    Dataset subset(const std::vector<std::size_t>& indices) const;
    void push_back(const PairedSample& s);
};

/// Number of entries strictly greater than delta.
template <typename Derived>
std::uint32_t compute_region_count(const Eigen::MatrixBase<Derived>& brain, double delta)
{
    return static_cast<std::uint32_t>((brain.array() > delta).count());
}

/// Throws ValidationError if shapes disagree, values are non-finite, or a
/// stored region count differs from the recomputed one.
void validate(const Dataset& ds);

/// Binary container: "MNMDATA1", u32 version, u32 N, u32 B, u32 T, f64 delta,
/// then per record B f64 brain, T f64 text, u32 region_count. Little-endian.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);

/// Loads the binary container, or a JSON-lines file (one {"brain": [...],
/// "text": [...]} object per line) when the file does not start with the
/// container magic. Region counts of JSON-lines input are computed with
/// `jsonl_delta`.
Dataset load_dataset(const std::filesystem::path& path, double jsonl_delta = kDefaultDelta);

struct SyntheticSpec {
    std::uint32_t tree_depth = 3;
    std::uint32_t branching = 3;
    std::uint32_t samples_per_node = 30;
    double noise_sigma = 0.5;
    std::uint64_t seed = 0;
    std::uint32_t brain_dim = 128;
    std::uint32_t text_dim = 64;
    double delta = kDefaultDelta;

    std::size_t node_count() const;
};

struct SyntheticDataset {
    Dataset data;
    std::vector<std::uint32_t> node_of_sample;
    std::vector<std::uint32_t> level_of_node;
    std::vector<std::int64_t> parent_of_node;  ///< -1 for the root
};

/// Tree of latent regions with nested brain supports. Ancestors activate
/// strictly more coordinates than descendants; every node emits several text
/// samples drawn around a node prototype.
SyntheticDataset generate_synthetic_tree(const SyntheticSpec& spec);

inline Dataset generate_synthetic(const SyntheticSpec& spec)
{
    return generate_synthetic_tree(spec).data;
}

struct Fold {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Shuffled k-fold partition; the first n % k folds get one extra test index.
std::vector<Fold> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed);

inline std::vector<Fold> kfold_split(const Dataset& ds, std::size_t k, std::uint64_t seed)
{
    return kfold_split(ds.size(), k, seed);
}

} // namespace mnm

#endif
