#include <benchmark/benchmark.h>

#include "mce/lce.hpp"
#include "mce/rce.hpp"
#include "mce/trainer.hpp"

namespace {

struct Fixture {
    mce::Dataset train;
    mce::ModelConfig mcfg;
    mce::MultiModalModel model;
    mce::BatchView batch;

    explicit Fixture(int batch_size)
        : train(make_data(batch_size)), mcfg(), model(mcfg, 11), batch{&train, {}} {
        for (int i = 0; i < batch_size; ++i) batch.indices.push_back(i);
    }

    static mce::Dataset make_data(int samples) {
        mce::SynthConfig cfg;
        cfg.samples = samples;
        return mce::generate(cfg);
    }
};

void BM_AttentionBlock(benchmark::State& state) {
    const int blocks = static_cast<int>(state.range(0));
    mce::Rng rng(3);
    mce::AttentionParams params = mce::AttentionParams::init(8, 2, 16, rng);
    mce::Tensor x = mce::Tensor::randn({blocks * 3, 8}, rng);
    for (auto _ : state) {
        mce::Tensor y = mce::attention_block(x, params, blocks);
        benchmark::DoNotOptimize(y.values().data());
    }
}
BENCHMARK(BM_AttentionBlock)->RangeMultiplier(4)->Range(1, 256);

void BM_TaskForwardBackward(benchmark::State& state) {
    Fixture f(static_cast<int>(state.range(0)));
    for (auto _ : state) {
        mce::Tape tape;
        {
            mce::TapeScope scope(tape);
            tape.backward(mce::softmax_cross_entropy(f.model.task_logits(f.batch),
                                                     f.batch.labels()));
        }
        benchmark::DoNotOptimize(&tape);
    }
}
BENCHMARK(BM_TaskForwardBackward)->RangeMultiplier(2)->Range(16, 128);

void BM_BatchShapley(benchmark::State& state) {
    Fixture f(static_cast<int>(state.range(0)));
    mce::ShapleyOptions opts;
    for (auto _ : state) {
        auto res = mce::batch_shapley(f.model, f.batch, opts);
        benchmark::DoNotOptimize(res.phi.data());
    }
}
BENCHMARK(BM_BatchShapley)->RangeMultiplier(2)->Range(16, 128);

void BM_FullObjectiveStep(benchmark::State& state) {
    Fixture f(static_cast<int>(state.range(0)));
    const std::vector<double> a = {0.5, 0.76, 1.74};
    const std::vector<double> b = {0.4, 0.3, 0.6};
    for (auto _ : state) {
        mce::Tape tape;
        {
            mce::TapeScope scope(tape);
            auto features = f.model.encode(f.batch);
            mce::Tensor stacked = f.model.stack_features(features);
            mce::Tensor task = mce::softmax_cross_entropy(
                f.model.task_logits_from(stacked, f.batch), f.batch.labels());
            mce::SubsetPlan plan = mce::build_subset_plan(f.batch.avail_masks());
            mce::Tensor single = mce::loss_single(f.model, features, f.batch.labels(),
                                                  f.batch.avail_masks(), a, b);
            mce::Tensor sub = mce::loss_sub(f.model, stacked, f.batch.size(), f.batch.labels(),
                                            plan, 1e-8);
            mce::Tensor aux = mce::loss_aux(f.model, stacked, f.batch.size(), plan, a, b, 1e-8);
            auto bd = mce::total_loss(std::move(task), std::move(single), std::move(sub),
                                      std::move(aux), mce::Lambdas{});
            tape.backward(bd.total);
        }
        benchmark::DoNotOptimize(&tape);
    }
}
BENCHMARK(BM_FullObjectiveStep)->RangeMultiplier(2)->Range(16, 128);

}  // namespace

BENCHMARK_MAIN();
