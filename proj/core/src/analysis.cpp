#include "mce/analysis.hpp"

#include <cmath>
#include <map>

#include "mce/ops.hpp"

namespace mce {

namespace {

double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

}  // namespace

ReprQualityReport repr_quality(const std::vector<std::vector<double>>& features,
                               const std::vector<int>& labels) {
    if (features.size() != labels.size()) {
        throw ShapeError("repr_quality: feature and label counts disagree");
    }
    std::map<int, std::vector<size_t>> by_class;
    for (size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    if (by_class.size() < 2) {
        throw ContractError("repr_quality: need at least two classes");
    }
    const size_t dim = features.empty() ? 0 : features[0].size();

    ReprQualityReport rep;

    // Class centroids (defined for every class, singleton or not).
    std::map<int, std::vector<double>> centroids;
    for (const auto& [cls, idx] : by_class) {
        std::vector<double> c(dim, 0.0);
        for (size_t i : idx) {
            for (size_t d = 0; d < dim; ++d) c[d] += features[i][d];
        }
        for (double& v : c) v /= static_cast<double>(idx.size());
        centroids[cls] = std::move(c);
    }

    // Intra-class: mean pairwise distance within each class of >= 2 samples.
    double intra_sum = 0.0;
    int intra_classes = 0;
    for (const auto& [cls, idx] : by_class) {
        if (idx.size() < 2) {
            rep.excluded_classes.push_back(cls);
            continue;
        }
        double acc = 0.0;
        long pairs = 0;
        for (size_t i = 0; i < idx.size(); ++i) {
            for (size_t j = i + 1; j < idx.size(); ++j) {
                acc += euclidean(features[idx[i]], features[idx[j]]);
                ++pairs;
            }
        }
        intra_sum += acc / static_cast<double>(pairs);
        ++intra_classes;
    }
    if (intra_classes == 0) {
        throw ContractError("repr_quality: every class is a singleton; intra-class distance undefined");
    }
    rep.intra = intra_sum / static_cast<double>(intra_classes);

    // Inter-class: mean pairwise distance between centroids.
    double inter_sum = 0.0;
    long inter_pairs = 0;
    for (auto it = centroids.begin(); it != centroids.end(); ++it) {
        for (auto jt = std::next(it); jt != centroids.end(); ++jt) {
            inter_sum += euclidean(it->second, jt->second);
            ++inter_pairs;
        }
    }
    rep.inter = inter_sum / static_cast<double>(inter_pairs);
    rep.ratio = rep.inter == 0.0 ? 0.0 : rep.intra / rep.inter;

    // Cosine consistency of every sample against its class centroid.
    double cos_sum = 0.0;
    for (size_t i = 0; i < labels.size(); ++i) {
        const auto& c = centroids[labels[i]];
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (size_t d = 0; d < dim; ++d) {
            dot += features[i][d] * c[d];
            na += features[i][d] * features[i][d];
            nb += c[d] * c[d];
        }
        double denom = std::sqrt(na) * std::sqrt(nb);
        cos_sum += denom < 1e-300 ? 0.0 : dot / denom;
    }
    rep.cosine = cos_sum / static_cast<double>(labels.size());
    return rep;
}

std::vector<std::vector<double>> fused_features(const MultiModalModel& model, const Dataset& data) {
    TapeSuspend no_grad;
    const int m = model.config().modalities;
    const int d = model.config().feature_dim;
    BatchView all = BatchView::whole(data);
    Tensor stacked = model.stack_features(model.encode(all));

    // Group samples by availability mask so each group fuses its own subset.
    std::map<uint64_t, std::vector<int>> groups;
    for (int n = 0; n < data.size(); ++n) groups[data.presence.row_mask(n)].push_back(n);

    std::vector<std::vector<double>> out(static_cast<size_t>(data.size()));
    for (const auto& [mask, samples] : groups) {
        std::vector<int> rows;
        rows.reserve(samples.size() * static_cast<size_t>(m));
        for (int n : samples) {
            for (int mm = 0; mm < m; ++mm) rows.push_back(n * m + mm);
        }
        Tensor fused = model.fused_features(take_rows(stacked, rows),
                                            static_cast<int>(samples.size()), mask);
        const auto& fv = fused.values();
        for (size_t i = 0; i < samples.size(); ++i) {
            out[static_cast<size_t>(samples[i])] =
                std::vector<double>(fv.begin() + static_cast<ptrdiff_t>(i) * d,
                                    fv.begin() + static_cast<ptrdiff_t>(i + 1) * d);
        }
    }
    return out;
}

const std::vector<AblationRow>& ablation_grid() {
    static const std::vector<AblationRow> rows = {
        {'a', false, false, false, false, false},
        {'b', false, false, true, false, false},
        {'c', false, false, false, true, false},
        {'d', false, false, false, false, true},
        {'e', false, false, true, true, false},
        {'f', false, false, true, false, true},
        {'g', false, false, false, true, true},
        {'h', false, false, true, true, true},
        {'i', true, false, true, true, true},
        {'j', false, true, true, true, true},
        {'k', true, true, true, false, false},
        {'l', true, true, false, false, true},
        {'m', true, true, true, true, true},
    };
    return rows;
}

}  // namespace mce
