#pragma once

#include <cstdint>
#include <vector>

#include "mce/coalition.hpp"
#include "mce/model.hpp"
#include "mce/synth.hpp"

namespace mce {

/// Dataset-level inverse-availability weights: raw[m] = N / present_count[m],
/// normalized by the mean so the factors average to exactly 1.
struct FactorA {
    std::vector<double> raw;
    std::vector<double> normalized;
};

FactorA compute_factor_a(const PresenceMatrix& presence);

/// Per-batch learning-state snapshot: Shapley sums, unimodal upper bounds,
/// capability gaps and the masked incentive factors.
struct LceState {
    std::vector<double> a;        // dataset factors in effect (normalized)
    std::vector<double> phi;      // batch Shapley sums
    std::vector<double> u;        // batch upper-bound correct counts
    std::vector<double> delta;    // u - phi
    std::vector<double> b;        // masked incentives, >= 0
    std::vector<int> present_count;
    long oracle_calls = 0;
};

/// b[m] = (u[m] - phi[m]) / present_count[m] when the gap is positive and
/// the modality occurs in the batch; 0 otherwise. Encouragement only: the
/// factors never penalize a modality.
std::vector<double> compute_factor_b(const std::vector<double>& phi, const std::vector<double>& u,
                                     const std::vector<int>& present_count);

struct ShapleyOptions {
    int exact_threshold = 10;  // exhaustive game size limit
    int mc_permutations = 100;
    uint64_t seed = 0;
    bool soft_value = false;  // true-class probability instead of 0/1 accuracy
};

/// Coalition utilities of a single sample over its available modalities.
/// The payoff of a subset is the per-sample prediction quality when fusing
/// only that subset's raw encoded features; the empty coalition pays 0.
class SampleCoalition {
  public:
    SampleCoalition(const MultiModalModel& model, Tensor features, uint64_t avail, int label,
                    bool soft_value = false);

    /// 0/1 correctness (or true-class probability when soft) of the
    /// subset-restricted prediction. Infeasible subsets are an error.
    double value(uint64_t subset) const;

    CoalitionGame game() const;
    uint64_t available() const { return avail_; }

  private:
    const MultiModalModel* model_;
    Tensor features_;  // [M x D] raw encoded stack of this sample
    uint64_t avail_;
    int label_;
    bool soft_;
};

struct BatchShapley {
    std::vector<double> phi;
    std::vector<int> present_count;
    long oracle_calls = 0;
};

/// Sums each modality's Shapley value over the samples of a batch. Small
/// per-sample games are solved exactly; larger ones fall back to the
/// Monte-Carlo estimator with per-sample derived seeds. Runs with the tape
/// suspended: factor computation never records gradients.
BatchShapley batch_shapley(const MultiModalModel& model, const BatchView& batch,
                           const ShapleyOptions& options);

/// Per-sample 0/1 correctness of the frozen unimodal models, cached so
/// upper bounds can be re-read per batch without re-running the models.
struct FrozenPredictions {
    int modalities = 0;
    std::vector<uint8_t> correct;  // sample-major, valid where present

    static FrozenPredictions compute(const std::vector<UnimodalModel>& frozen, const Dataset& data);
};

/// u[m] = number of batch samples with modality m present that the frozen
/// unimodal model m classifies correctly.
std::vector<double> batch_upperbound(const FrozenPredictions& cache, const BatchView& batch);

/// Uncached variant that queries the frozen models directly.
std::vector<double> batch_upperbound(const std::vector<UnimodalModel>& frozen, const BatchView& batch);

/// Assembles the full per-batch state from its pieces.
LceState compute_lce_state(const std::vector<double>& a, const BatchShapley& shapley,
                           const std::vector<double>& u);

}  // namespace mce
