#include <cmath>

#include "doctest.h"
#include "mce/lce.hpp"
#include "mce/serialize.hpp"
#include "mce/trainer.hpp"
#include "support/oracles.hpp"

using namespace mce;
using mce::testing::permutation_average_shapley;

namespace {

PresenceMatrix counts_10_8_5_2() {
    PresenceMatrix p;
    p.samples = 10;
    p.modalities = 4;
    p.e.assign(40, 0);
    for (int n = 0; n < 10; ++n) p.e[static_cast<size_t>(n) * 4 + 0] = 1;
    for (int n = 0; n < 8; ++n) p.e[static_cast<size_t>(n) * 4 + 1] = 1;
    for (int n = 0; n < 5; ++n) p.e[static_cast<size_t>(n) * 4 + 2] = 1;
    for (int n = 0; n < 2; ++n) p.e[static_cast<size_t>(n) * 4 + 3] = 1;
    return p;
}

Dataset small_dataset(uint64_t seed = 5, int samples = 12) {
    SynthConfig cfg;
    cfg.samples = samples;
    cfg.input_dim = 6;
    cfg.seed = seed;
    return generate(cfg);
}

ModelConfig small_model_config() {
    ModelConfig cfg;
    cfg.modalities = 3;
    cfg.classes = 4;
    cfg.input_dim = 6;
    cfg.feature_dim = 4;
    cfg.heads = 2;
    cfg.ffn_dim = 8;
    return cfg;
}

}  // namespace

TEST_CASE("dataset speed factors reproduce the inverse-availability weights") {
    FactorA f = compute_factor_a(counts_10_8_5_2());
    CHECK(f.raw == std::vector<double>{1.0, 1.25, 2.0, 5.0});
    double mean = 0.0;
    for (double v : f.normalized) mean += v;
    mean /= 4.0;
    CHECK(std::fabs(mean - 1.0) < 1e-12);
}

TEST_CASE("all-present data yields unit factors") {
    PresenceMatrix p;
    p.samples = 6;
    p.modalities = 3;
    p.e.assign(18, 1);
    FactorA f = compute_factor_a(p);
    CHECK(f.raw == std::vector<double>{1.0, 1.0, 1.0});
    CHECK(f.normalized == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("a fully absent modality is a configuration error naming it") {
    PresenceMatrix p;
    p.samples = 4;
    p.modalities = 2;
    p.e = {1, 0, 1, 0, 1, 0, 1, 0};
    try {
        compute_factor_a(p);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("modality 1") != std::string::npos);
    }
}

TEST_CASE("incentive factors reproduce the reference batch traces") {
    // Three-modality batch, early training: large gaps everywhere.
    auto b1 = compute_factor_b({23.6667, 11.6667, 4.0}, {91, 26, 12}, {101, 65, 20});
    CHECK(std::fabs(b1[0] - 0.6667) < 1e-3);
    CHECK(std::fabs(b1[1] - 0.2205) < 1e-3);
    CHECK(std::fabs(b1[2] - 0.4000) < 1e-3);

    // Late training: two modalities exceed their ceiling and are masked.
    auto b2 = compute_factor_b({59.6667, 34.6667, 10.6667}, {91, 29, 8}, {105, 79, 25});
    CHECK(std::fabs(b2[0] - 0.2984) < 1e-3);
    CHECK(b2[1] == 0.0);
    CHECK(b2[2] == 0.0);

    // Four modalities, one absent from the batch entirely.
    auto b3 = compute_factor_b({0.3053, 0.2146, 0.0, 0.2013},
                               {0.8216, 0.8051, 0.8018, 0.8283}, {1, 1, 0, 1});
    CHECK(std::fabs(b3[0] - 0.5163) < 1e-3);
    CHECK(std::fabs(b3[1] - 0.5905) < 1e-3);
    CHECK(b3[2] == 0.0);
    CHECK(std::fabs(b3[3] - 0.6271) < 1e-3);
}

TEST_CASE("incentives never go negative") {
    Rng rng(15);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> phi(3), u(3);
        std::vector<int> counts(3);
        for (int m = 0; m < 3; ++m) {
            phi[static_cast<size_t>(m)] = 10.0 * rng.uniform() - 5.0;
            u[static_cast<size_t>(m)] = 10.0 * rng.uniform() - 5.0;
            counts[static_cast<size_t>(m)] = rng.uniform_int(4);  // may be zero
        }
        auto b = compute_factor_b(phi, u, counts);
        for (int m = 0; m < 3; ++m) {
            CHECK(b[static_cast<size_t>(m)] >= 0.0);
            if (counts[static_cast<size_t>(m)] == 0) CHECK(b[static_cast<size_t>(m)] == 0.0);
        }
    }
}

TEST_CASE("coalition values follow the accuracy convention") {
    Dataset ds = small_dataset();
    MultiModalModel model(small_model_config(), 21);
    BatchView bv = BatchView::whole(ds);
    TapeSuspend no_grad;
    Tensor stacked = model.stack_features(model.encode(bv));
    const int d = model.config().feature_dim;
    std::vector<double> rows(stacked.values().begin(), stacked.values().begin() + 3 * d);
    SampleCoalition sample(model, Tensor({3, d}, rows), ds.presence.row_mask(0), ds.labels[0]);

    CHECK(sample.value(0) == 0.0);  // empty coalition pays nothing
    uint64_t avail = ds.presence.row_mask(0);
    double v = sample.value(avail);
    CHECK((v == 0.0 || v == 1.0));
    uint64_t infeasible = (~avail) & 0b111;
    if (infeasible) CHECK_THROWS_AS(sample.value(infeasible), ContractError);
}

TEST_CASE("uniform logits break ties toward class zero") {
    // A model whose decoder weights are zero predicts class 0 everywhere, so
    // the coalition value is 1 exactly when the label is 0.
    ModelConfig cfg = small_model_config();
    MultiModalModel model(cfg, 33);
    for (auto& [name, p] : model.params()) {
        if (name == "decoder.w" || name == "decoder.b") *p = Tensor::zeros(p->shape());
    }
    Dataset ds = small_dataset();
    BatchView bv = BatchView::whole(ds);
    TapeSuspend no_grad;
    Tensor stacked = model.stack_features(model.encode(bv));
    const int d = cfg.feature_dim;
    for (int n = 0; n < 4; ++n) {
        std::vector<double> rows(stacked.values().begin() + static_cast<ptrdiff_t>(n) * 3 * d,
                                 stacked.values().begin() + static_cast<ptrdiff_t>(n + 1) * 3 * d);
        SampleCoalition sample(model, Tensor({3, d}, rows), ds.presence.row_mask(n),
                               ds.labels[static_cast<size_t>(n)]);
        double expect = ds.labels[static_cast<size_t>(n)] == 0 ? 1.0 : 0.0;
        CHECK(sample.value(ds.presence.row_mask(n)) == expect);
    }
}

TEST_CASE("batch shapley sums per-sample attributions") {
    Dataset ds = small_dataset(31, 8);
    MultiModalModel model(small_model_config(), 44);
    BatchView bv = BatchView::whole(ds);

    ShapleyOptions opts;
    BatchShapley batch = batch_shapley(model, bv, opts);

    // Independent accumulation: brute-force permutation averages per sample.
    TapeSuspend no_grad;
    Tensor stacked = model.stack_features(model.encode(bv));
    const int d = model.config().feature_dim;
    std::vector<double> expect(3, 0.0);
    for (int n = 0; n < ds.size(); ++n) {
        std::vector<double> rows(stacked.values().begin() + static_cast<ptrdiff_t>(n) * 3 * d,
                                 stacked.values().begin() + static_cast<ptrdiff_t>(n + 1) * 3 * d);
        SampleCoalition sample(model, Tensor({3, d}, rows), ds.presence.row_mask(n),
                               ds.labels[static_cast<size_t>(n)]);
        auto phi = permutation_average_shapley(sample.game(), ds.presence.row_mask(n));
        for (int m = 0; m < 3; ++m) expect[static_cast<size_t>(m)] += phi[static_cast<size_t>(m)];
    }
    for (int m = 0; m < 3; ++m) {
        CHECK(batch.phi[static_cast<size_t>(m)] == doctest::Approx(expect[static_cast<size_t>(m)]).epsilon(1e-10));
    }
}

TEST_CASE("a modality absent from the whole batch gets zero attribution") {
    Dataset ds = small_dataset(71, 6);
    for (int n = 0; n < ds.size(); ++n) {
        ds.presence.e[static_cast<size_t>(n) * 3 + 1] = 0;  // knock out modality 1
        ds.presence.e[static_cast<size_t>(n) * 3 + 0] = 1;
    }
    MultiModalModel model(small_model_config(), 13);
    BatchShapley batch = batch_shapley(model, BatchView::whole(ds), ShapleyOptions{});
    CHECK(batch.phi[1] == 0.0);
    CHECK(batch.present_count[1] == 0);
}

TEST_CASE("single-sample efficiency: one present modality earns its value") {
    Dataset ds = small_dataset(91, 4);
    for (int n = 0; n < ds.size(); ++n) {
        ds.presence.e[static_cast<size_t>(n) * 3 + 0] = 1;
        ds.presence.e[static_cast<size_t>(n) * 3 + 1] = 0;
        ds.presence.e[static_cast<size_t>(n) * 3 + 2] = 0;
    }
    MultiModalModel model(small_model_config(), 3);
    BatchView one{&ds, {0}};
    BatchShapley batch = batch_shapley(model, one, ShapleyOptions{});

    TapeSuspend no_grad;
    Tensor stacked = model.stack_features(model.encode(one));
    SampleCoalition sample(model, stacked, 0b001, ds.labels[0]);
    CHECK(batch.phi[0] == sample.value(0b001));  // efficiency with v(empty)=0
    CHECK(batch.phi[1] == 0.0);
    CHECK(batch.phi[2] == 0.0);
}

TEST_CASE("scaling a sample's game scales its attribution and keeps the argmax") {
    Rng rng(123);
    CoalitionGame g = mce::testing::random_table_game(3, rng, 0.0, 1.0);
    auto base = exact_shapley(g, 0b111);
    CoalitionGame scaled = g;
    auto inner = g.value;
    scaled.value = [inner](uint64_t s) { return 3.5 * inner(s); };
    scaled.empty_value = 3.5 * g.empty_value;
    auto res = exact_shapley(scaled, 0b111);
    int argmax_base = 0, argmax_scaled = 0;
    for (int m = 0; m < 3; ++m) {
        CHECK(res.phi[static_cast<size_t>(m)] ==
              doctest::Approx(3.5 * base.phi[static_cast<size_t>(m)]).epsilon(1e-12));
        if (base.phi[static_cast<size_t>(m)] > base.phi[static_cast<size_t>(argmax_base)]) argmax_base = m;
        if (res.phi[static_cast<size_t>(m)] > res.phi[static_cast<size_t>(argmax_scaled)]) argmax_scaled = m;
    }
    CHECK(argmax_base == argmax_scaled);
}

TEST_CASE("factor computation records nothing and leaves parameters alone") {
    Dataset ds = small_dataset(17, 10);
    MultiModalModel model(small_model_config(), 29);
    uint64_t before = params_hash(model.params());

    Tape outer;
    TapeScope scope(outer);
    size_t nodes_before = outer.node_count();
    BatchShapley batch = batch_shapley(model, BatchView::whole(ds), ShapleyOptions{});
    CHECK(outer.node_count() == nodes_before);
    CHECK(params_hash(model.params()) == before);
    CHECK(batch.oracle_calls > 0);
}

TEST_CASE("upper bounds count correct frozen predictions on present samples") {
    SynthConfig dcfg;
    dcfg.samples = 120;
    dcfg.input_dim = 6;
    dcfg.snr = {1e9, 1e9, 1e9};  // separable: pretraining reaches the ceiling
    dcfg.missing_rates = {0.0, 0.4, 0.7};
    dcfg.seed = 55;
    Dataset ds = generate(dcfg);

    ModelConfig mcfg = small_model_config();
    TrainConfig tcfg;
    tcfg.pretrain_epochs = 80;
    tcfg.batch_size = 32;
    tcfg.learning_rate = 0.02;
    tcfg.seed = 2;
    auto frozen = pretrain_all(ds, mcfg, tcfg);

    BatchView bv = BatchView::whole(ds);
    auto direct = batch_upperbound(frozen, bv);
    auto cache = FrozenPredictions::compute(frozen, ds);
    auto cached = batch_upperbound(cache, bv);
    CHECK(direct == cached);

    // Noiseless data: the frozen models are perfect, so the upper bound
    // equals the present count per modality.
    for (int m = 0; m < 3; ++m) {
        CHECK(direct[static_cast<size_t>(m)] ==
              doctest::Approx(static_cast<double>(ds.presence.count_modality(m))));
    }

    // A modality missing from a batch slice scores zero.
    std::vector<int> no_m2;
    for (int n = 0; n < ds.size(); ++n) {
        if (!ds.presence.present(n, 2)) no_m2.push_back(n);
    }
    REQUIRE(!no_m2.empty());
    BatchView slice{&ds, no_m2};
    auto u = batch_upperbound(cache, slice);
    CHECK(u[2] == 0.0);
}

TEST_CASE("soft coalition values are true-class probabilities") {
    Dataset ds = small_dataset(101, 4);
    MultiModalModel model(small_model_config(), 61);
    BatchView bv = BatchView::whole(ds);
    TapeSuspend no_grad;
    Tensor stacked = model.stack_features(model.encode(bv));
    const int d = model.config().feature_dim;
    std::vector<double> rows(stacked.values().begin(), stacked.values().begin() + 3 * d);
    uint64_t avail = ds.presence.row_mask(0);
    SampleCoalition soft(model, Tensor({3, d}, rows), avail, ds.labels[0], true);

    double v = soft.value(avail);
    CHECK(v > 0.0);
    CHECK(v < 1.0);
    Tensor probs = softmax_rows(model.fuse_logits(Tensor({3, d}, rows), 1, avail));
    CHECK(v == doctest::Approx(probs.at(0, ds.labels[0])).epsilon(1e-12));
}

TEST_CASE("converged models earn full coalition value on separable data") {
    SynthConfig dcfg;
    dcfg.samples = 240;
    dcfg.input_dim = 6;
    dcfg.snr = {1e6, 1e6, 1e6};
    dcfg.missing_rates = {0.0, 0.0, 0.0};
    dcfg.seed = 12;
    Dataset train = generate(dcfg, "train");
    SynthConfig te = dcfg;
    te.samples = 60;
    Dataset test = generate(te, "test");

    ModelConfig mcfg = small_model_config();
    TrainConfig tcfg;
    tcfg.epochs = 30;
    tcfg.batch_size = 48;
    tcfg.learning_rate = 0.01;
    tcfg.pretrain_epochs = 20;
    tcfg.probe_at_end = false;
    tcfg.seed = 3;
    TrainResult r = train_mce(train, test, mcfg, tcfg);
    REQUIRE(r.log.abort_reason.empty());

    TapeSuspend no_grad;
    BatchView bv = BatchView::whole(train);
    Tensor stacked = r.model.stack_features(r.model.encode(bv));
    const int d = mcfg.feature_dim;
    for (int n = 0; n < 40; ++n) {
        std::vector<double> rows(stacked.values().begin() + static_cast<ptrdiff_t>(n) * 3 * d,
                                 stacked.values().begin() + static_cast<ptrdiff_t>(n + 1) * 3 * d);
        SampleCoalition sc(r.model, Tensor({3, d}, rows), 0b111,
                           train.labels[static_cast<size_t>(n)]);
        for (uint64_t s : {0b001ull, 0b011ull, 0b101ull, 0b111ull}) {
            CHECK(sc.value(s) == 1.0);  // every coalition with the lead modality
        }
    }
}
