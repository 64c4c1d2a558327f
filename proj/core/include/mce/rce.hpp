#pragma once

#include <cstdint>
#include <vector>

#include "mce/model.hpp"
#include "mce/ops.hpp"
#include "mce/tensor.hpp"

namespace mce {

/// Feasible non-empty modality subsets of a batch: every subset of some
/// sample's available set, with the samples it applies to. The dropped set
/// of a (sample, subset) pair is avail & ~subset.
struct SubsetPlan {
    std::vector<uint64_t> subsets;            // ascending by bitmask value
    std::vector<std::vector<int>> feasible;   // per subset: local batch indices
    std::vector<uint64_t> avail;              // per sample: availability mask

    uint64_t dropped(int local_index, size_t subset_index) const {
        return avail[static_cast<size_t>(local_index)] & ~subsets[subset_index];
    }
};

/// Enumerates the batch's feasible subsets. When `cap > 0` and the plan
/// exceeds it, a uniform sample without replacement keeps the cost bounded
/// (deterministic for the given seed); pass cap <= 0 to disable.
SubsetPlan build_subset_plan(const std::vector<uint64_t>& avail_masks, int cap = 0,
                             uint64_t seed = 0);

struct Lambdas {
    double single = 1.0;
    double sub = 2.0;
    double aux = 1.0;
};

/// Direct per-modality supervision, each modality weighted by a[m] * b[m]
/// and averaged over the samples where it is present. Modalities with a
/// zero weight (or no present samples) contribute exactly 0.
Tensor loss_single(const MultiModalModel& model, const std::vector<Tensor>& features,
                   const std::vector<int>& labels, const std::vector<uint64_t>& avail,
                   const std::vector<double>& a, const std::vector<double>& b);

/// Subset-ensemble supervision: mean over feasible subsets of the
/// per-subset cross-entropy sum scaled by 1 / (|samples| + eps).
Tensor loss_sub(const MultiModalModel& model, const Tensor& stacked, int batch,
                const std::vector<int>& labels, const SubsetPlan& plan, double eps);

/// Cross-modal completion supervision: for every (subset, sample) pair the
/// present-but-dropped slots are zeroed, reconstructed from the kept slots,
/// and compared against the detached true features; each modality term is
/// weighted by a[m] * b[m] and the dropped-count guard 1/(|dropped| + eps).
Tensor loss_aux(const MultiModalModel& model, const Tensor& stacked, int batch,
                const SubsetPlan& plan, const std::vector<double>& a, const std::vector<double>& b,
                double eps, RowNorm norm = RowNorm::kMse);

struct LossBreakdown {
    Tensor task, single, sub, aux, total;
    Lambdas lambdas;

    double task_value() const { return task.value(); }
    double single_value() const { return single.value(); }
    double sub_value() const { return sub.value(); }
    double aux_value() const { return aux.value(); }
    double total_value() const { return total.value(); }
};

/// total = task + lambda_single * single + lambda_sub * sub + lambda_aux * aux.
/// Verifies every component is finite before combining.
LossBreakdown total_loss(Tensor task, Tensor single, Tensor sub, Tensor aux, Lambdas lambdas);

}  // namespace mce
