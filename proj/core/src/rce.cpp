#include "mce/rce.hpp"

#include <bit>
#include <cmath>
#include <set>

#include "mce/coalition.hpp"
#include "mce/rng.hpp"

namespace mce {

SubsetPlan build_subset_plan(const std::vector<uint64_t>& avail_masks, int cap, uint64_t seed) {
    SubsetPlan plan;
    plan.avail = avail_masks;

    std::set<uint64_t> distinct;
    for (uint64_t mask : avail_masks) {
        if (mask == 0) throw ContractError("subset plan: a batch row has no present modality");
        for (uint64_t s : enumerate_subsets(mask)) distinct.insert(s);
    }
    plan.subsets.assign(distinct.begin(), distinct.end());

    if (cap > 0 && static_cast<int>(plan.subsets.size()) > cap) {
        std::vector<uint64_t> pool = plan.subsets;
        Rng rng(seed);
        rng.shuffle(pool);
        pool.resize(static_cast<size_t>(cap));
        std::set<uint64_t> kept(pool.begin(), pool.end());
        plan.subsets.assign(kept.begin(), kept.end());
    }

    plan.feasible.resize(plan.subsets.size());
    for (size_t s = 0; s < plan.subsets.size(); ++s) {
        for (int n = 0; n < static_cast<int>(avail_masks.size()); ++n) {
            if ((plan.subsets[s] & ~avail_masks[static_cast<size_t>(n)]) == 0) {
                plan.feasible[s].push_back(n);
            }
        }
    }
    return plan;
}

Tensor loss_single(const MultiModalModel& model, const std::vector<Tensor>& features,
                   const std::vector<int>& labels, const std::vector<uint64_t>& avail,
                   const std::vector<double>& a, const std::vector<double>& b) {
    const int m = model.config().modalities;
    Tensor acc = Tensor::scalar(0.0);
    bool any = false;
    for (int mm = 0; mm < m; ++mm) {
        double w = a[static_cast<size_t>(mm)] * b[static_cast<size_t>(mm)];
        if (w == 0.0) continue;
        std::vector<int> rows;
        std::vector<int> y;
        for (size_t n = 0; n < avail.size(); ++n) {
            if (avail[n] & (1ull << mm)) {
                rows.push_back(static_cast<int>(n));
                y.push_back(labels[n]);
            }
        }
        if (rows.empty()) continue;
        Tensor logits = model.unimodal_logits(mm, take_rows(features[static_cast<size_t>(mm)], rows));
        Tensor term = scale(softmax_cross_entropy(logits, y), w);
        acc = any ? add(acc, term) : term;
        any = true;
    }
    return any ? acc : Tensor::scalar(0.0);
}

Tensor loss_sub(const MultiModalModel& model, const Tensor& stacked, int batch,
                const std::vector<int>& labels, const SubsetPlan& plan, double eps) {
    if (plan.subsets.empty()) return Tensor::scalar(0.0);
    const int m = model.config().modalities;
    if (stacked.rows() != batch * m) {
        throw ShapeError("loss_sub: stack " + shape_str(stacked.shape()) +
                         " does not match batch " + std::to_string(batch));
    }
    Tensor acc = Tensor::scalar(0.0);
    bool any = false;
    for (size_t s = 0; s < plan.subsets.size(); ++s) {
        const auto& samples = plan.feasible[s];
        if (samples.empty()) continue;
        std::vector<int> rows;
        std::vector<int> y;
        rows.reserve(samples.size() * static_cast<size_t>(m));
        for (int n : samples) {
            for (int mm = 0; mm < m; ++mm) rows.push_back(n * m + mm);
            y.push_back(labels[static_cast<size_t>(n)]);
        }
        Tensor group = take_rows(stacked, rows);
        Tensor logits = model.fuse_logits(group, static_cast<int>(samples.size()), plan.subsets[s]);
        Tensor ce = sum(softmax_ce_rows(logits, y));
        Tensor term = scale(ce, 1.0 / (static_cast<double>(samples.size()) + eps));
        acc = any ? add(acc, term) : term;
        any = true;
    }
    if (!any) return Tensor::scalar(0.0);
    return scale(acc, 1.0 / static_cast<double>(plan.subsets.size()));
}

Tensor loss_aux(const MultiModalModel& model, const Tensor& stacked, int batch,
                const SubsetPlan& plan, const std::vector<double>& a, const std::vector<double>& b,
                double eps, RowNorm norm) {
    if (plan.subsets.empty()) return Tensor::scalar(0.0);
    const int m = model.config().modalities;
    if (stacked.rows() != batch * m) {
        throw ShapeError("loss_aux: stack " + shape_str(stacked.shape()) +
                         " does not match batch " + std::to_string(batch));
    }
    bool all_masked = true;
    for (int mm = 0; mm < m; ++mm) {
        if (a[static_cast<size_t>(mm)] * b[static_cast<size_t>(mm)] != 0.0) all_masked = false;
    }
    if (all_masked) return Tensor::scalar(0.0);

    Tensor acc = Tensor::scalar(0.0);
    bool any = false;
    for (size_t s = 0; s < plan.subsets.size(); ++s) {
        const auto& samples = plan.feasible[s];
        if (samples.empty()) continue;
        const uint64_t subset = plan.subsets[s];
        const int group = static_cast<int>(samples.size());

        // Per-row weights of the reconstruction targets: only slots that are
        // present but deliberately dropped for this subset count.
        std::vector<double> row_w(static_cast<size_t>(group) * m, 0.0);
        bool has_target = false;
        for (int gi = 0; gi < group; ++gi) {
            uint64_t drop = plan.dropped(samples[static_cast<size_t>(gi)], s);
            if (drop == 0) continue;
            double guard = 1.0 / (static_cast<double>(std::popcount(drop)) + eps);
            for (int mm = 0; mm < m; ++mm) {
                if (!(drop & (1ull << mm))) continue;
                double w = a[static_cast<size_t>(mm)] * b[static_cast<size_t>(mm)] * guard;
                if (w != 0.0) has_target = true;
                row_w[static_cast<size_t>(gi) * m + mm] = w;
            }
        }
        if (!has_target) continue;

        std::vector<int> rows;
        rows.reserve(static_cast<size_t>(group) * m);
        std::vector<double> keep(static_cast<size_t>(group) * m);
        for (int gi = 0; gi < group; ++gi) {
            for (int mm = 0; mm < m; ++mm) {
                rows.push_back(samples[static_cast<size_t>(gi)] * m + mm);
                keep[static_cast<size_t>(gi) * m + mm] = (subset >> mm) & 1ull ? 1.0 : 0.0;
            }
        }
        Tensor gathered = take_rows(stacked, rows);
        Tensor dropped_input = mask_rows(gathered, keep);
        Tensor completed = model.reconstruct(dropped_input, group);
        Tensor target = detach(gathered);
        Tensor term = scale(row_norm_loss(completed, target, row_w, norm),
                            1.0 / static_cast<double>(group));
        acc = any ? add(acc, term) : term;
        any = true;
    }
    if (!any) return Tensor::scalar(0.0);
    return scale(acc, 1.0 / static_cast<double>(plan.subsets.size()));
}

LossBreakdown total_loss(Tensor task, Tensor single, Tensor sub, Tensor aux, Lambdas lambdas) {
    auto check = [](const Tensor& t, const char* name) {
        if (!t.defined() || t.size() != 1) {
            throw ContractError(std::string("total_loss: component '") + name + "' is not a scalar");
        }
        if (!std::isfinite(t.value())) {
            throw NonFiniteError(std::string("training diverged: loss component '") + name +
                                 "' is not finite");
        }
    };
    check(task, "task");
    check(single, "single");
    check(sub, "sub");
    check(aux, "aux");

    Tensor total = task;
    if (lambdas.single != 0.0) total = add(total, scale(single, lambdas.single));
    if (lambdas.sub != 0.0) total = add(total, scale(sub, lambdas.sub));
    if (lambdas.aux != 0.0) total = add(total, scale(aux, lambdas.aux));

    LossBreakdown out;
    out.task = std::move(task);
    out.single = std::move(single);
    out.sub = std::move(sub);
    out.aux = std::move(aux);
    out.total = std::move(total);
    out.lambdas = lambdas;
    return out;
}

}  // namespace mce
