#pragma once

#include <string>
#include <vector>

#include "mce/model.hpp"
#include "mce/synth.hpp"

namespace mce {

/// Structure of the fused feature space of a labeled split.
///   intra  — mean over classes of the mean pairwise distance within class
///   inter  — mean pairwise distance between class centroids
///   ratio  — intra / inter (lower is better)
///   cosine — mean cosine similarity of samples to their class centroid
/// Classes with fewer than two samples are excluded from intra and listed.
struct ReprQualityReport {
    double intra = 0.0;
    double inter = 0.0;
    double ratio = 0.0;
    double cosine = 0.0;
    std::vector<int> excluded_classes;
};

ReprQualityReport repr_quality(const std::vector<std::vector<double>>& features,
                               const std::vector<int>& labels);

/// Fused representation of every sample under the deployed subset path
/// (each sample fused from exactly its available modalities).
std::vector<std::vector<double>> fused_features(const MultiModalModel& model, const Dataset& data);

/// One toggle combination of the component study grid, rows a..m.
struct AblationRow {
    char label;
    bool use_factor_a, use_factor_b;
    bool loss_single, loss_sub, loss_aux;
};

const std::vector<AblationRow>& ablation_grid();

}  // namespace mce
