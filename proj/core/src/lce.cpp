#include "mce/lce.hpp"

#include <bit>
#include <cmath>

#include "mce/ops.hpp"

namespace mce {

FactorA compute_factor_a(const PresenceMatrix& presence) {
    const int m = presence.modalities;
    const double n = static_cast<double>(presence.samples);
    FactorA f;
    f.raw.resize(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        int c = presence.count_modality(i);
        if (c == 0) {
            throw ConfigError("factor A: modality " + std::to_string(i) +
                              " is absent from the entire dataset");
        }
        f.raw[static_cast<size_t>(i)] = n / static_cast<double>(c);
    }
    double mean = 0.0;
    for (double v : f.raw) mean += v;
    mean /= static_cast<double>(m);
    f.normalized = f.raw;
    for (double& v : f.normalized) v /= mean;
    return f;
}

std::vector<double> compute_factor_b(const std::vector<double>& phi, const std::vector<double>& u,
                                     const std::vector<int>& present_count) {
    if (phi.size() != u.size() || phi.size() != present_count.size()) {
        throw ShapeError("factor B: phi, upper bounds and counts must have one entry per modality");
    }
    std::vector<double> b(phi.size(), 0.0);
    for (size_t m = 0; m < phi.size(); ++m) {
        double delta = u[m] - phi[m];
        if (delta > 0.0 && present_count[m] > 0) {
            b[m] = delta / static_cast<double>(present_count[m]);
        }
    }
    return b;
}

SampleCoalition::SampleCoalition(const MultiModalModel& model, Tensor features, uint64_t avail,
                                 int label, bool soft_value)
    : model_(&model), features_(std::move(features)), avail_(avail), label_(label), soft_(soft_value) {
    if (features_.rows() != model.config().modalities ||
        features_.cols() != model.config().feature_dim) {
        throw ShapeError("sample coalition: features " + shape_str(features_.shape()) +
                         " do not match the model");
    }
}

double SampleCoalition::value(uint64_t subset) const {
    if (subset == 0) return 0.0;  // no modalities, no prediction
    if (subset & ~avail_) {
        throw ContractError("coalition value: subset uses modalities absent from the sample");
    }
    TapeSuspend no_grad;
    Tensor logits = model_->fuse_logits(features_, 1, subset);
    if (soft_) {
        Tensor p = softmax_rows(logits);
        return p.at(0, label_);
    }
    return argmax_row(logits.values(), 0, logits.cols()) == label_ ? 1.0 : 0.0;
}

CoalitionGame SampleCoalition::game() const {
    CoalitionGame g;
    g.players = model_->config().modalities;
    g.empty_value = 0.0;
    g.value = [this](uint64_t s) { return value(s); };
    return g;
}

BatchShapley batch_shapley(const MultiModalModel& model, const BatchView& batch,
                           const ShapleyOptions& options) {
    const int m = model.config().modalities;
    const int d = model.config().feature_dim;
    BatchShapley out;
    out.phi.assign(static_cast<size_t>(m), 0.0);
    out.present_count.assign(static_cast<size_t>(m), 0);

    TapeSuspend no_grad;
    Tensor stacked = model.stack_features(model.encode(batch));
    const auto& sv = stacked.values();

    for (int i = 0; i < batch.size(); ++i) {
        uint64_t avail = batch.avail_mask(i);
        for (int mm = 0; mm < m; ++mm) {
            if (avail & (1ull << mm)) ++out.present_count[static_cast<size_t>(mm)];
        }
        std::vector<double> rows(sv.begin() + static_cast<ptrdiff_t>(i) * m * d,
                                 sv.begin() + static_cast<ptrdiff_t>(i + 1) * m * d);
        SampleCoalition sample(model, Tensor({m, d}, std::move(rows)), avail, batch.label(i),
                               options.soft_value);
        CoalitionGame game = sample.game();
        ShapleyResult res =
            std::popcount(avail) <= options.exact_threshold
                ? exact_shapley(game, avail)
                : mc_shapley(game, avail, options.mc_permutations,
                             mix_seed(options.seed, static_cast<uint64_t>(i)));
        for (int mm = 0; mm < m; ++mm) out.phi[static_cast<size_t>(mm)] += res.phi[static_cast<size_t>(mm)];
        out.oracle_calls += res.oracle_calls;
    }
    return out;
}

FrozenPredictions FrozenPredictions::compute(const std::vector<UnimodalModel>& frozen,
                                             const Dataset& data) {
    FrozenPredictions cache;
    cache.modalities = data.modalities;
    cache.correct.assign(static_cast<size_t>(data.size()) * data.modalities, 0);
    TapeSuspend no_grad;
    BatchView all = BatchView::whole(data);
    for (int m = 0; m < data.modalities; ++m) {
        Tensor logits = frozen[static_cast<size_t>(m)].logits(all.modality_input(m));
        for (int n = 0; n < data.size(); ++n) {
            if (!data.presence.present(n, m)) continue;
            bool hit = argmax_row(logits.values(), n, logits.cols()) == data.labels[static_cast<size_t>(n)];
            cache.correct[static_cast<size_t>(n) * data.modalities + m] = hit ? 1 : 0;
        }
    }
    return cache;
}

std::vector<double> batch_upperbound(const FrozenPredictions& cache, const BatchView& batch) {
    const int m = cache.modalities;
    std::vector<double> u(static_cast<size_t>(m), 0.0);
    for (int i = 0; i < batch.size(); ++i) {
        int n = batch.indices[static_cast<size_t>(i)];
        for (int mm = 0; mm < m; ++mm) {
            if (!batch.data->presence.present(n, mm)) continue;
            u[static_cast<size_t>(mm)] += cache.correct[static_cast<size_t>(n) * m + mm];
        }
    }
    return u;
}

std::vector<double> batch_upperbound(const std::vector<UnimodalModel>& frozen,
                                     const BatchView& batch) {
    const int m = batch.data->modalities;
    std::vector<double> u(static_cast<size_t>(m), 0.0);
    TapeSuspend no_grad;
    for (int mm = 0; mm < m; ++mm) {
        Tensor logits = frozen[static_cast<size_t>(mm)].logits(batch.modality_input(mm));
        for (int i = 0; i < batch.size(); ++i) {
            int n = batch.indices[static_cast<size_t>(i)];
            if (!batch.data->presence.present(n, mm)) continue;
            if (argmax_row(logits.values(), i, logits.cols()) == batch.label(i)) u[static_cast<size_t>(mm)] += 1.0;
        }
    }
    return u;
}

LceState compute_lce_state(const std::vector<double>& a, const BatchShapley& shapley,
                           const std::vector<double>& u) {
    LceState st;
    st.a = a;
    st.phi = shapley.phi;
    st.u = u;
    st.present_count = shapley.present_count;
    st.oracle_calls = shapley.oracle_calls;
    st.delta.resize(u.size());
    for (size_t m = 0; m < u.size(); ++m) st.delta[m] = u[m] - shapley.phi[m];
    st.b = compute_factor_b(shapley.phi, u, shapley.present_count);
    return st;
}

}  // namespace mce
