#ifndef MNM_EVALUATION_HPP
#define MNM_EVALUATION_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnm/data.hpp"
#include "mnm/geometry.hpp"
#include "mnm/training.hpp"

namespace mnm {

enum class Direction { text_to_brain, brain_to_text };

const char* to_string(Direction d);

/// Negated exterior angles, rows = queries, columns = candidates. The brain
/// embedding always takes the parent slot of the exterior angle.
struct SimilarityMatrix {
    Eigen::MatrixXd values;
    std::size_t degenerate_pairs = 0;  ///< pairs scored -pi because the angle was undefined
};

SimilarityMatrix similarity_matrix(std::span<const LorentzPoint<double>> queries,
                                   std::span<const LorentzPoint<double>> candidates, Direction direction,
                                   Curvature<double> c);

/// Percentage of queries whose true candidate ranks in the top k. Ties are
/// broken in favour of the lower candidate index.
double recall_at_k(const SimilarityMatrix& sim, std::span<const std::size_t> truth, std::size_t k);

/// Query i is paired with candidate i.
double recall_at_k(const SimilarityMatrix& sim, std::size_t k);

struct RecallStats {
    std::vector<double> folds;
    double mean = 0.0;
    double stddev = 0.0;  ///< sample standard deviation, 0 for a single fold
};

RecallStats summarize(std::vector<double> values);

struct RetrievalReport {
    std::map<std::size_t, RecallStats> text_to_brain;
    std::map<std::size_t, RecallStats> brain_to_text;
    std::vector<std::size_t> skipped_k;
    std::size_t degenerate_pairs = 0;
    std::vector<std::string> notes;
};

/// Recall for every k in `ks` on one set of paired embeddings; k larger than
/// the number of candidates is skipped and noted.
RetrievalReport retrieval_report(const Embeddings& emb, std::span<const std::size_t> ks, Curvature<double> c);

/// Random embeddings: origin exponential map of standard normal tangents.
std::vector<LorentzPoint<double>> random_embeddings(std::size_t n, Eigen::Index dim, Curvature<double> c,
                                                    std::uint64_t seed);

enum class ModelKind { trained, null };

struct CrossValidationOptions {
    std::size_t folds = 10;
    std::vector<std::size_t> ks{5, 10, 100};
    std::uint64_t split_seed = 0;
    unsigned threads = 1;
    ModelKind model = ModelKind::trained;
};

/// Raised when a fold fails; carries the fold index.
class FoldError : public std::runtime_error {
public:
    FoldError(std::size_t fold, const std::string& what)
        : std::runtime_error("fold " + std::to_string(fold) + ": " + what), fold(fold)
    {
    }
    std::size_t fold;
};

/// Trains on each fold's train split (or draws null embeddings), embeds the
/// held-out split and scores retrieval in both directions.
RetrievalReport cross_validated_retrieval(const Dataset& data, const ModelConfig& model, const TrainConfig& train,
                                          const CrossValidationOptions& opt);

/// Tie-corrected Kendall rank correlation (tau-b).
double kendall_tau(std::span<const double> x, std::span<const double> y);
double kendall_tau(std::span<const double> x, std::span<const std::uint32_t> y);

/// Time coordinates of a set of embeddings.
std::vector<double> time_components(std::span<const LorentzPoint<double>> pts);

/// Softmax over negated exterior angles to each basis embedding (basis in
/// the brain slot).
Eigen::VectorXd basis_similarity_scores(const LorentzPoint<double>& text,
                                        std::span<const LorentzPoint<double>> basis, Curvature<double> c,
                                        std::size_t* degenerate = nullptr);

/// Marks the ceil(fraction * M) highest scores; ties go to the lower index.
std::vector<bool> top_percentile_mask(std::span<const double> scores, double fraction = 0.10);

/// Disk coordinates for plotting. For d > 2 the two space axes with the
/// largest variance over the set are kept and re-lifted before the Poincare
/// map; the result is scaled into the unit disk.
std::vector<Eigen::Vector2d> poincare_disk_coordinates(std::span<const LorentzPoint<double>> pts,
                                                       Curvature<double> c);

/// CSV "label,x,y".
void export_poincare(std::span<const LorentzPoint<double>> pts, std::span<const std::string> labels,
                     const std::filesystem::path& path, Curvature<double> c);

/// CSV "time,region_count".
void export_time_histogram(std::span<const LorentzPoint<double>> brain, std::span<const std::uint32_t> counts,
                           const std::filesystem::path& path);

struct BasisScore {
    std::size_t query = 0;
    std::vector<double> probabilities;
    std::vector<bool> top_mask;
};

struct EvalReport {
    RetrievalReport retrieval;
    std::optional<double> kendall_tau;
    std::vector<BasisScore> basis_scores;
    std::size_t degenerate_pairs = 0;
    std::vector<std::string> notes;
};

/// JSON with keys recall, tau, basis_scores, diagnostics.
std::string to_json(const EvalReport& report);

} // namespace mnm

#endif
