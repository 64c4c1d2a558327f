#include <cmath>

#include "doctest.h"
#include "mce/optim.hpp"
#include "mce/ops.hpp"
#include "mce/synth.hpp"

using namespace mce;

namespace {

// Plain logistic-regression probe on one modality's raw inputs.
double linear_probe_train_accuracy(const Dataset& ds, int modality, int epochs = 120) {
    std::vector<int> rows;
    for (int n = 0; n < ds.size(); ++n) {
        if (ds.presence.present(n, modality)) rows.push_back(n);
    }
    std::vector<double> xv;
    std::vector<int> labels;
    for (int n : rows) {
        const double* x = ds.input(n, modality);
        xv.insert(xv.end(), x, x + ds.input_dim);
        labels.push_back(ds.labels[static_cast<size_t>(n)]);
    }
    Tensor x({static_cast<int>(rows.size()), ds.input_dim}, xv);
    Rng rng(5);
    Tensor w = Tensor::randn({ds.input_dim, ds.classes}, rng, 0.1);
    Tensor b = Tensor::zeros({ds.classes});
    ParamRefs params = {{"w", &w}, {"b", &b}};
    auto opt = make_optimizer(OptimizerKind::kAdam, 0.05);
    for (int e = 0; e < epochs; ++e) {
        Tape tape;
        {
            TapeScope scope(tape);
            tape.backward(softmax_cross_entropy(dense(x, w, b), labels));
        }
        opt->step(params, tape);
    }
    return accuracy(dense(x, w, b), labels);
}

}  // namespace

TEST_CASE("generation is deterministic and validated") {
    SynthConfig cfg;
    cfg.samples = 64;
    Dataset a = generate(cfg);
    Dataset b = generate(cfg);
    CHECK(a.inputs == b.inputs);
    CHECK(a.labels == b.labels);
    CHECK(a.presence.e == b.presence.e);

    SynthConfig bad = cfg;
    bad.snr = {1.0};
    CHECK_THROWS_AS(generate(bad), ConfigError);
    bad = cfg;
    bad.missing_rates = {0.2, 0.5, 1.0};
    CHECK_THROWS_AS(generate(bad), ConfigError);
}

TEST_CASE("splits share centroids but differ in draws") {
    SynthConfig cfg;
    cfg.samples = 32;
    Dataset train = generate(cfg, "train");
    Dataset test = generate(cfg, "test");
    CHECK(train.inputs != test.inputs);

    // Same class + same modality should concentrate around one centroid in
    // both splits when the noise is tiny.
    SynthConfig sharp = cfg;
    sharp.snr = {1e9, 1e9, 1e9};
    Dataset a = generate(sharp, "train");
    Dataset b = generate(sharp, "test");
    int ya = a.labels[0];
    for (int n = 0; n < b.size(); ++n) {
        if (b.labels[static_cast<size_t>(n)] != ya) continue;
        for (int d = 0; d < a.input_dim; ++d) {
            CHECK(a.input(0, 0)[d] == doctest::Approx(b.input(n, 0)[d]).epsilon(1e-6));
        }
        break;
    }
}

TEST_CASE("noiseless data is linearly separable per modality") {
    SynthConfig cfg;
    cfg.samples = 400;
    cfg.snr = {1e9, 1e9, 1e9};
    cfg.missing_rates = {0.0, 0.0, 0.0};
    Dataset ds = generate(cfg);
    for (int m = 0; m < cfg.modalities; ++m) {
        CHECK(linear_probe_train_accuracy(ds, m) == doctest::Approx(1.0));
    }
}

TEST_CASE("snr ordering shows up in held-out probe accuracy") {
    SynthConfig cfg;
    cfg.samples = 1500;
    cfg.classes = 4;
    cfg.snr = {5.0, 2.0, 1.0};
    cfg.missing_rates = {0.0, 0.0, 0.0};
    cfg.seed = 9;
    Dataset ds = generate(cfg);
    double a0 = linear_probe_train_accuracy(ds, 0);
    double a1 = linear_probe_train_accuracy(ds, 1);
    double a2 = linear_probe_train_accuracy(ds, 2);
    CHECK(a0 > a1);
    CHECK(a1 > a2);
}

TEST_CASE("apply_missing with zero rates keeps everything") {
    PresenceMatrix p = apply_missing(50, 3, {0.0, 0.0, 0.0}, 1);
    for (uint8_t v : p.e) CHECK(v == 1);
}

TEST_CASE("apply_missing matches the target rates and never empties a row") {
    // Whole-row resampling conditions the row on having at least one
    // present modality, so the exact marginal is (1 - r_m) / (1 - prod r).
    const int n = 10000;
    const std::vector<double> rates = {0.2, 0.5, 0.8};
    const double p_all_absent = 0.2 * 0.5 * 0.8;
    PresenceMatrix p = apply_missing(n, 3, rates, 77);
    for (int m = 0; m < 3; ++m) {
        double expected = (1.0 - rates[static_cast<size_t>(m)]) / (1.0 - p_all_absent);
        CHECK(std::fabs(p.column_mean(m) - expected) < 0.02);
    }
    for (int i = 0; i < n; ++i) CHECK(p.row_count(i) >= 1);

    // At mild rates the conditioning is negligible and the raw rates hold.
    PresenceMatrix q = apply_missing(n, 3, {0.1, 0.2, 0.3}, 78);
    CHECK(std::fabs(q.column_mean(0) - 0.9) < 0.02);
    CHECK(std::fabs(q.column_mean(1) - 0.8) < 0.02);
    CHECK(std::fabs(q.column_mean(2) - 0.7) < 0.02);
}

TEST_CASE("presence counts translate to row masks") {
    // A 10-sample, 4-modality layout with per-modality counts 10, 8, 5, 2.
    PresenceMatrix p;
    p.samples = 10;
    p.modalities = 4;
    p.e.assign(40, 0);
    auto set = [&](int n, int m) { p.e[static_cast<size_t>(n) * 4 + m] = 1; };
    for (int n = 0; n < 10; ++n) set(n, 0);
    for (int n = 0; n < 8; ++n) set(n, 1);
    for (int n = 0; n < 5; ++n) set(n, 2);
    for (int n = 0; n < 2; ++n) set(n, 3);
    CHECK(p.count_modality(0) == 10);
    CHECK(p.count_modality(1) == 8);
    CHECK(p.count_modality(2) == 5);
    CHECK(p.count_modality(3) == 2);
    CHECK(p.row_mask(0) == 0b1111);
    CHECK(p.row_mask(9) == 0b0001);
}

TEST_CASE("every generated sample keeps at least one modality") {
    SynthConfig cfg;
    cfg.samples = 2000;
    cfg.missing_rates = {0.8, 0.8, 0.8};
    Dataset ds = generate(cfg);
    for (int n = 0; n < ds.size(); ++n) CHECK(ds.presence.row_count(n) >= 1);
}
