#include <bit>
#include <cmath>

#include "doctest.h"
#include "mce/rce.hpp"
#include "support/oracles.hpp"

using namespace mce;
using mce::testing::finite_difference;
using mce::testing::max_rel_error;

namespace {

// Independent plan construction: scan every subset of the full set and keep
// those feasible for at least one sample.
SubsetPlan brute_force_plan(const std::vector<uint64_t>& avail, int modalities) {
    SubsetPlan plan;
    plan.avail = avail;
    for (uint64_t s = 1; s < (1ull << modalities); ++s) {
        std::vector<int> feasible;
        for (int n = 0; n < static_cast<int>(avail.size()); ++n) {
            if ((s & ~avail[static_cast<size_t>(n)]) == 0) feasible.push_back(n);
        }
        if (!feasible.empty()) {
            plan.subsets.push_back(s);
            plan.feasible.push_back(std::move(feasible));
        }
    }
    return plan;
}

Dataset make_dataset(int samples, int modalities, uint64_t seed) {
    SynthConfig cfg;
    cfg.samples = samples;
    cfg.modalities = modalities;
    cfg.input_dim = 5;
    cfg.snr.assign(static_cast<size_t>(modalities), 2.0);
    cfg.missing_rates.assign(static_cast<size_t>(modalities), 0.4);
    cfg.seed = seed;
    return generate(cfg);
}

ModelConfig model_config_for(const Dataset& ds) {
    ModelConfig cfg;
    cfg.modalities = ds.modalities;
    cfg.classes = ds.classes;
    cfg.input_dim = ds.input_dim;
    cfg.feature_dim = 4;
    cfg.heads = 2;
    cfg.ffn_dim = 8;
    return cfg;
}

}  // namespace

TEST_CASE("subset plans match brute force on random batches") {
    Rng rng(404);
    for (int rep = 0; rep < 60; ++rep) {
        int modalities = 2 + rng.uniform_int(3);  // 2..4
        int samples = 1 + rng.uniform_int(8);
        std::vector<uint64_t> avail(static_cast<size_t>(samples));
        for (auto& mask : avail) {
            do {
                mask = static_cast<uint64_t>(rng.uniform_int(1 << modalities));
            } while (mask == 0);
        }
        SubsetPlan fast = build_subset_plan(avail);
        SubsetPlan brute = brute_force_plan(avail, modalities);
        REQUIRE(fast.subsets == brute.subsets);
        REQUIRE(fast.feasible == brute.feasible);
        // Kept and dropped modalities partition each sample's available set.
        for (size_t s = 0; s < fast.subsets.size(); ++s) {
            for (int n : fast.feasible[s]) {
                uint64_t kept = fast.subsets[s];
                uint64_t drop = fast.dropped(n, s);
                CHECK((kept & drop) == 0);
                CHECK((kept | drop) == avail[static_cast<size_t>(n)]);
            }
        }
    }
}

TEST_CASE("full three-modality presence yields seven subsets") {
    SubsetPlan plan = build_subset_plan({0b111});
    CHECK(plan.subsets.size() == 7);
    for (const auto& f : plan.feasible) CHECK(f == std::vector<int>{0});
}

TEST_CASE("missing one of four modalities yields the seven remaining subsets") {
    SubsetPlan plan = build_subset_plan({0b1101});  // second modality missing
    CHECK(plan.subsets.size() == 7);
    for (uint64_t s : plan.subsets) CHECK((s & 0b0010) == 0);
}

TEST_CASE("disjoint singleton masks produce singleton plans") {
    SubsetPlan plan = build_subset_plan({0b001, 0b010});
    REQUIRE(plan.subsets == std::vector<uint64_t>{0b001, 0b010});
    CHECK(plan.feasible[0] == std::vector<int>{0});
    CHECK(plan.feasible[1] == std::vector<int>{1});
}

TEST_CASE("the subset cap bounds the plan deterministically") {
    std::vector<uint64_t> avail(4, 0b11111);
    SubsetPlan capped = build_subset_plan(avail, 8, 1234);
    CHECK(capped.subsets.size() == 8);
    SubsetPlan again = build_subset_plan(avail, 8, 1234);
    CHECK(capped.subsets == again.subsets);
    SubsetPlan full = build_subset_plan(avail, 0, 0);
    CHECK(full.subsets.size() == 31);
}

TEST_CASE("masked incentives silence the single-modal loss and its gradients") {
    Dataset ds = make_dataset(6, 3, 9);
    MultiModalModel model(model_config_for(ds), 17);
    BatchView bv = BatchView::whole(ds);

    Tape tape;
    {
        TapeScope scope(tape);
        auto features = model.encode(bv);
        Tensor zero = loss_single(model, features, bv.labels(), bv.avail_masks(),
                                  {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0});
        CHECK(zero.value() == 0.0);
        Tensor stacked = model.stack_features(features);
        SubsetPlan plan = build_subset_plan(bv.avail_masks());
        Tensor aux = loss_aux(model, stacked, bv.size(), plan, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0},
                              1e-8);
        CHECK(aux.value() == 0.0);
        tape.backward(total_loss(softmax_cross_entropy(model.task_logits_from(stacked, bv), bv.labels()),
                                 zero, Tensor::scalar(0.0), aux, Lambdas{1, 1, 1})
                          .total);
    }
    for (auto& [name, p] : model.params()) {
        if (name.rfind("unimodal_decoder", 0) == 0) {
            for (double g : tape.grad(*p)) CHECK(g == 0.0);
        }
    }
}

TEST_CASE("single-modal loss composes the weighted cross entropies") {
    // One modality, unit factors, zeroed decoder -> uniform logits -> ln C.
    Dataset ds = make_dataset(5, 2, 10);
    for (int n = 0; n < ds.size(); ++n) {
        ds.presence.e[static_cast<size_t>(n) * 2 + 0] = 1;
        ds.presence.e[static_cast<size_t>(n) * 2 + 1] = 0;
    }
    ModelConfig cfg = model_config_for(ds);
    cfg.modalities = 2;
    MultiModalModel model(cfg, 23);
    for (auto& [name, p] : model.params()) {
        if (name.rfind("unimodal_decoder0", 0) == 0) *p = Tensor::zeros(p->shape());
    }
    BatchView bv = BatchView::whole(ds);
    auto features = model.encode(bv);
    Tensor loss = loss_single(model, features, bv.labels(), bv.avail_masks(), {1.0, 1.0},
                              {1.0, 0.0});
    CHECK(loss.value() == doctest::Approx(std::log(4.0)));
}

TEST_CASE("single-modal loss gradients pass finite differences") {
    Dataset ds = make_dataset(4, 3, 12);
    MultiModalModel model(model_config_for(ds), 31);
    BatchView bv = BatchView::whole(ds);
    std::vector<double> a = {1.3, 0.9, 0.8};
    std::vector<double> b = {0.4, 0.0, 1.7};

    auto params = model.params();
    Tape tape;
    {
        TapeScope scope(tape);
        tape.backward(
            loss_single(model, model.encode(bv), bv.labels(), bv.avail_masks(), a, b));
    }
    for (auto& [name, p] : params) {
        if (name.rfind("encoder0", 0) != 0 && name != "unimodal_decoder0.w") continue;
        Tensor original = *p;
        auto eval = [&](const std::vector<double>& vals) {
            *p = Tensor(original.shape(), vals);
            double out =
                loss_single(model, model.encode(bv), bv.labels(), bv.avail_masks(), a, b).value();
            *p = original;
            return out;
        };
        CHECK_MESSAGE(max_rel_error(tape.grad(original), finite_difference(eval, original.values())) < 1e-4,
                      name);
    }
}

TEST_CASE("subset loss equals the hand enumeration on a full-presence batch") {
    Dataset ds = make_dataset(3, 3, 14);
    for (auto& v : ds.presence.e) v = 1;
    MultiModalModel model(model_config_for(ds), 41);
    BatchView bv = BatchView::whole(ds);
    TapeSuspend no_grad;
    Tensor stacked = model.stack_features(model.encode(bv));
    SubsetPlan plan = build_subset_plan(bv.avail_masks());
    REQUIRE(plan.subsets.size() == 7);

    const double eps = 1e-8;
    Tensor loss = loss_sub(model, stacked, bv.size(), bv.labels(), plan, eps);

    // Independent accumulation, one fused prediction at a time.
    double expect = 0.0;
    for (uint64_t s = 1; s < 8; ++s) {
        double inner = 0.0;
        for (int n = 0; n < 3; ++n) {
            std::vector<int> rows = {n * 3 + 0, n * 3 + 1, n * 3 + 2};
            Tensor one = take_rows(stacked, rows);
            Tensor logits = model.fuse_logits(one, 1, s);
            inner += softmax_ce_rows(logits, {ds.labels[static_cast<size_t>(n)]}).values()[0];
        }
        expect += inner / (3.0 + eps);
    }
    expect /= 7.0;
    CHECK(loss.value() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("subset loss handles the degenerate single-sample plan") {
    Dataset ds = make_dataset(1, 3, 15);
    ds.presence.e = {1, 0, 0};
    MultiModalModel model(model_config_for(ds), 43);
    BatchView bv = BatchView::whole(ds);
    TapeSuspend no_grad;
    Tensor stacked = model.stack_features(model.encode(bv));
    SubsetPlan plan = build_subset_plan(bv.avail_masks());
    REQUIRE(plan.subsets.size() == 1);

    const double eps = 1e-8;
    Tensor loss = loss_sub(model, stacked, 1, bv.labels(), plan, eps);
    Tensor direct = softmax_ce_rows(model.fuse_logits(stacked, 1, 0b001), bv.labels());
    // Only the 1/(1 + eps) guard separates the two.
    CHECK(loss.value() == doctest::Approx(direct.values()[0]).epsilon(1e-7));
    CHECK(std::fabs(loss.value() - direct.values()[0] / (1.0 + eps)) < 1e-15);
}

TEST_CASE("completion loss matches an independent per-sample oracle") {
    Dataset ds = make_dataset(5, 3, 16);
    MultiModalModel model(model_config_for(ds), 47);
    BatchView bv = BatchView::whole(ds);
    TapeSuspend no_grad;
    Tensor stacked = model.stack_features(model.encode(bv));
    SubsetPlan plan = build_subset_plan(bv.avail_masks());
    std::vector<double> a = {1.1, 0.8, 1.4};
    std::vector<double> b = {0.5, 0.9, 0.2};
    const double eps = 1e-8;
    const int d = model.config().feature_dim;

    Tensor loss = loss_aux(model, stacked, bv.size(), plan, a, b, eps);

    double expect = 0.0;
    for (size_t s = 0; s < plan.subsets.size(); ++s) {
        double per_subset = 0.0;
        for (int n : plan.feasible[s]) {
            uint64_t drop = plan.dropped(n, s);
            if (drop == 0) continue;
            std::vector<int> rows = {n * 3 + 0, n * 3 + 1, n * 3 + 2};
            Tensor sample = take_rows(stacked, rows);
            std::vector<double> keep(3);
            for (int m = 0; m < 3; ++m) keep[static_cast<size_t>(m)] = (plan.subsets[s] >> m) & 1 ? 1.0 : 0.0;
            Tensor completed = model.reconstruct(mask_rows(sample, keep), 1);
            double guard = 1.0 / (static_cast<double>(std::popcount(drop)) + eps);
            for (int m = 0; m < 3; ++m) {
                if (!(drop & (1ull << m))) continue;
                double sq = 0.0;
                for (int dd = 0; dd < d; ++dd) {
                    double diff = completed.at(m, dd) - sample.at(m, dd);
                    sq += diff * diff;
                }
                per_subset += a[static_cast<size_t>(m)] * b[static_cast<size_t>(m)] * guard * (sq / d);
            }
        }
        expect += per_subset / static_cast<double>(plan.feasible[s].size());
    }
    expect /= static_cast<double>(plan.subsets.size());
    CHECK(loss.value() == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("completion loss ignores subsets where nothing is dropped") {
    Dataset ds = make_dataset(2, 3, 18);
    ds.presence.e = {1, 0, 0, 0, 1, 0};  // singletons only
    MultiModalModel model(model_config_for(ds), 53);
    BatchView bv = BatchView::whole(ds);
    TapeSuspend no_grad;
    Tensor stacked = model.stack_features(model.encode(bv));
    SubsetPlan plan = build_subset_plan(bv.avail_masks());
    Tensor loss = loss_aux(model, stacked, 2, plan, {1, 1, 1}, {1, 1, 1}, 1e-8);
    CHECK(loss.value() == 0.0);
}

TEST_CASE("completion targets are detached from the tape") {
    Dataset ds = make_dataset(4, 3, 19);
    MultiModalModel model(model_config_for(ds), 59);
    BatchView bv = BatchView::whole(ds);
    std::vector<double> a = {1.0, 1.0, 1.0};
    std::vector<double> b = {1.0, 1.0, 1.0};
    const double eps = 1e-8;

    SubsetPlan plan = build_subset_plan(bv.avail_masks());
    auto params = model.params();
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor stacked = model.stack_features(model.encode(bv));
        tape.backward(loss_aux(model, stacked, bv.size(), plan, a, b, eps));
    }

    // Frozen-target finite differences: the analytic gradient must match the
    // derivative where the comparison target is held at the base features.
    TapeSuspend no_grad;
    Tensor base = model.stack_features(model.encode(bv));
    const int m = 3, d = model.config().feature_dim;

    auto eval_frozen_target = [&]() {
        Tensor stacked = model.stack_features(model.encode(bv));
        double total = 0.0;
        for (size_t s = 0; s < plan.subsets.size(); ++s) {
            double per_subset = 0.0;
            for (int n : plan.feasible[s]) {
                uint64_t drop = plan.dropped(n, s);
                if (drop == 0) continue;
                std::vector<int> rows;
                std::vector<double> keep;
                for (int mm = 0; mm < m; ++mm) {
                    rows.push_back(n * m + mm);
                    keep.push_back((plan.subsets[s] >> mm) & 1 ? 1.0 : 0.0);
                }
                Tensor completed = model.reconstruct(mask_rows(take_rows(stacked, rows), keep), 1);
                double guard = 1.0 / (static_cast<double>(std::popcount(drop)) + eps);
                for (int mm = 0; mm < m; ++mm) {
                    if (!(drop & (1ull << mm))) continue;
                    double sq = 0.0;
                    for (int dd = 0; dd < d; ++dd) {
                        double diff = completed.at(mm, dd) - base.at(n * m + mm, dd);
                        sq += diff * diff;
                    }
                    per_subset += guard * (sq / d);
                }
            }
            total += per_subset / static_cast<double>(plan.feasible[s].size());
        }
        return total / static_cast<double>(plan.subsets.size());
    };

    for (auto& [name, p] : params) {
        if (name != "encoder0.l2.w") continue;
        Tensor original = *p;
        auto eval = [&](const std::vector<double>& vals) {
            *p = Tensor(original.shape(), vals);
            double out = eval_frozen_target();
            *p = original;
            return out;
        };
        CHECK(max_rel_error(tape.grad(original), finite_difference(eval, original.values())) < 1e-4);
    }
}

TEST_CASE("total objective is the exact weighted combination") {
    LossBreakdown bd = total_loss(Tensor::scalar(1.0), Tensor::scalar(0.5), Tensor::scalar(0.25),
                                  Tensor::scalar(0.1), Lambdas{1, 2, 1});
    CHECK(bd.total_value() == doctest::Approx(2.1).epsilon(1e-15));

    LossBreakdown plain = total_loss(Tensor::scalar(0.7), Tensor::scalar(9.0), Tensor::scalar(9.0),
                                     Tensor::scalar(9.0), Lambdas{0, 0, 0});
    CHECK(plain.total_value() == 0.7);
}
