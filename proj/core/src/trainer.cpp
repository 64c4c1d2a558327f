#include "mce/trainer.hpp"

#include <algorithm>
#include <cmath>

namespace mce {

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train.epochs: need >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size: need >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate: must be > 0");
    if (mc_permutations < 1) throw ConfigError("train.mc_permutations: need >= 1");
    if (exact_threshold < 1) throw ConfigError("train.exact_threshold: need >= 1");
    if (!(epsilon > 0.0)) throw ConfigError("train.epsilon: must be > 0");
    if (pretrain_epochs < 1) throw ConfigError("train.pretrain_epochs: need >= 1");
    if (probe_epochs < 1) throw ConfigError("train.probe_epochs: need >= 1");
    if (eval_every < 0) throw ConfigError("train.eval_every: need >= 0");
    if (probe_every < 0) throw ConfigError("train.probe_every: need >= 0");
}

namespace {

std::vector<int> present_indices(const Dataset& data, int modality) {
    std::vector<int> rows;
    for (int n = 0; n < data.size(); ++n) {
        if (data.presence.present(n, modality)) rows.push_back(n);
    }
    return rows;
}

std::vector<std::vector<int>> epoch_batches(std::vector<int>& order, Rng& rng, int batch_size) {
    rng.shuffle(order);
    std::vector<std::vector<int>> batches;
    for (size_t off = 0; off < order.size(); off += static_cast<size_t>(batch_size)) {
        size_t end = std::min(order.size(), off + static_cast<size_t>(batch_size));
        batches.emplace_back(order.begin() + static_cast<ptrdiff_t>(off),
                             order.begin() + static_cast<ptrdiff_t>(end));
    }
    return batches;
}

}  // namespace

UnimodalModel pretrain_unimodal(const Dataset& train, int modality, const ModelConfig& model_cfg,
                                const TrainConfig& cfg) {
    std::vector<int> rows = present_indices(train, modality);
    if (rows.empty()) {
        throw ConfigError("pretrain: modality " + std::to_string(modality) +
                          " has no present samples");
    }
    Rng init_rng(mix_seed(stream_seed(cfg.seed, "pretrain-init"), static_cast<uint64_t>(modality)));
    UnimodalModel model;
    model.modality = modality;
    model.enc = Encoder::init(model_cfg.input_dim, model_cfg.feature_dim, model_cfg.feature_dim,
                              init_rng);
    model.dec = DenseLayer::init(model_cfg.feature_dim, model_cfg.classes, init_rng);

    ParamRefs params;
    params.emplace_back("enc.l1.w", &model.enc.l1.w);
    params.emplace_back("enc.l1.b", &model.enc.l1.b);
    params.emplace_back("enc.l2.w", &model.enc.l2.w);
    params.emplace_back("enc.l2.b", &model.enc.l2.b);
    params.emplace_back("dec.w", &model.dec.w);
    params.emplace_back("dec.b", &model.dec.b);

    double lr = cfg.pretrain_learning_rate > 0.0 ? cfg.pretrain_learning_rate : cfg.learning_rate;
    auto opt = make_optimizer(cfg.optimizer, lr);
    Rng shuffle_rng(mix_seed(stream_seed(cfg.seed, "pretrain-shuffle"), static_cast<uint64_t>(modality)));
    for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
        for (auto& batch : epoch_batches(rows, shuffle_rng, cfg.batch_size)) {
            BatchView bv{&train, batch};
            Tape tape;
            Tensor loss;
            {
                TapeScope scope(tape);
                Tensor logits = model.logits(bv.modality_input(modality));
                loss = softmax_cross_entropy(logits, bv.labels());
            }
            tape.backward(loss);
            opt->step(params, tape);
        }
    }
    return model;
}

double unimodal_accuracy(const UnimodalModel& model, const Dataset& data) {
    std::vector<int> rows = present_indices(data, model.modality);
    if (rows.empty()) return 0.0;
    TapeSuspend no_grad;
    BatchView bv{&data, rows};
    Tensor logits = model.logits(bv.modality_input(model.modality));
    return accuracy(logits, bv.labels());
}

std::vector<UnimodalModel> pretrain_all(const Dataset& train, const ModelConfig& model_cfg,
                                        const TrainConfig& cfg) {
    std::vector<UnimodalModel> models;
    for (int m = 0; m < model_cfg.modalities; ++m) {
        models.push_back(pretrain_unimodal(train, m, model_cfg, cfg));
    }
    return models;
}

SubsetReport evaluate_all_subsets(const MultiModalModel& model, const Dataset& data) {
    const int m = model.config().modalities;
    TapeSuspend no_grad;
    BatchView all = BatchView::whole(data);
    Tensor stacked = model.stack_features(model.encode(all));
    std::vector<uint64_t> avail = all.avail_masks();

    SubsetReport report;
    double acc_sum = 0.0;
    for (uint64_t subset : enumerate_subsets(model.config().full_mask())) {
        std::vector<int> rows;
        std::vector<int> labels;
        for (int n = 0; n < data.size(); ++n) {
            if ((subset & ~avail[static_cast<size_t>(n)]) != 0) continue;
            for (int mm = 0; mm < m; ++mm) rows.push_back(n * m + mm);
            labels.push_back(data.labels[static_cast<size_t>(n)]);
        }
        double acc = 0.0;
        if (!labels.empty()) {
            Tensor group = take_rows(stacked, rows);
            Tensor logits = model.fuse_logits(group, static_cast<int>(labels.size()), subset);
            acc = accuracy(logits, labels);
        }
        report.rows.push_back(EvalRow{0, subset, static_cast<int>(labels.size()), acc});
        acc_sum += acc;
    }
    report.average = acc_sum / static_cast<double>(report.rows.size());
    return report;
}

double probe_capability(const Encoder& encoder, const ModelConfig& model_cfg, const Dataset& train,
                        const Dataset& test, int modality, int epochs, int batch_size, double lr,
                        uint64_t seed) {
    std::vector<int> train_rows = present_indices(train, modality);
    std::vector<int> test_rows = present_indices(test, modality);
    if (train_rows.empty() || test_rows.empty()) return 0.0;

    // Frozen features; only the fresh decoder trains.
    TapeSuspend no_grad_features;
    BatchView train_view{&train, train_rows};
    Tensor train_features = encoder.forward(train_view.modality_input(modality));
    std::vector<int> train_labels = train_view.labels();

    Rng rng(seed);
    DenseLayer dec = DenseLayer::init(model_cfg.feature_dim, model_cfg.classes, rng);
    ParamRefs params;
    params.emplace_back("w", &dec.w);
    params.emplace_back("b", &dec.b);
    auto opt = make_optimizer(OptimizerKind::kAdam, lr);

    std::vector<int> order(train_rows.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (auto& batch : epoch_batches(order, rng, batch_size)) {
            std::vector<int> y;
            y.reserve(batch.size());
            for (int i : batch) y.push_back(train_labels[static_cast<size_t>(i)]);
            Tape tape;
            Tensor loss;
            {
                TapeScope scope(tape);
                Tensor logits = dense(take_rows(train_features, batch), dec.w, dec.b);
                loss = softmax_cross_entropy(logits, y);
            }
            tape.backward(loss);
            opt->step(params, tape);
        }
    }

    BatchView test_view{&test, test_rows};
    Tensor test_logits = dense(encoder.forward(test_view.modality_input(modality)), dec.w, dec.b);
    return accuracy(test_logits, test_view.labels());
}

namespace {

void append_probes(RunLog& log, const MultiModalModel& model, const Dataset& train,
                   const Dataset& test, const TrainConfig& cfg, int epoch) {
    for (int m = 0; m < model.config().modalities; ++m) {
        double cap = probe_capability(model.encoder(m), model.config(), train, test, m,
                                      cfg.probe_epochs, cfg.batch_size, cfg.learning_rate,
                                      mix_seed(stream_seed(cfg.seed, "probe"),
                                               static_cast<uint64_t>(m) * 1000003ull +
                                                   static_cast<uint64_t>(epoch)));
        log.probes.push_back(ProbeRow{epoch, m, cap, log.frozen_accuracy[static_cast<size_t>(m)]});
    }
}

void append_eval(RunLog& log, const MultiModalModel& model, const Dataset& test, int epoch) {
    SubsetReport report = evaluate_all_subsets(model, test);
    for (auto row : report.rows) {
        row.epoch = epoch;
        log.evals.push_back(row);
    }
    log.evals.push_back(EvalRow{epoch, 0, 0, report.average});
}

}  // namespace

TrainResult train_mce(const Dataset& train, const Dataset& test, const ModelConfig& model_cfg,
                      const TrainConfig& cfg, const std::vector<UnimodalModel>* pretrained) {
    cfg.validate();
    model_cfg.validate();
    if (train.modalities != model_cfg.modalities) {
        throw ConfigError("train_mce: dataset has " + std::to_string(train.modalities) +
                          " modalities, model expects " + std::to_string(model_cfg.modalities));
    }

    const int m = model_cfg.modalities;
    RunLog log;

    FactorA factor_a = compute_factor_a(train.presence);
    log.factor_a_raw = factor_a.raw;
    log.factor_a = factor_a.normalized;

    std::vector<UnimodalModel> frozen =
        pretrained ? *pretrained : pretrain_all(train, model_cfg, cfg);
    log.frozen_accuracy.resize(static_cast<size_t>(m));
    for (int mm = 0; mm < m; ++mm) {
        log.frozen_accuracy[static_cast<size_t>(mm)] = unimodal_accuracy(frozen[static_cast<size_t>(mm)], test);
    }
    FrozenPredictions frozen_cache = FrozenPredictions::compute(frozen, train);

    MultiModalModel model(model_cfg, cfg.seed);
    ParamRefs params = model.params();
    auto opt = make_optimizer(cfg.optimizer, cfg.learning_rate);

    const std::vector<double> ones(static_cast<size_t>(m), 1.0);
    const std::vector<double>& a_eff = cfg.use_factor_a ? factor_a.normalized : ones;
    const bool need_plan = cfg.lambdas.sub != 0.0 || cfg.lambdas.aux != 0.0;
    const int plan_cap = model_cfg.modalities > 4 ? cfg.subset_cap : 0;

    std::vector<int> order(static_cast<size_t>(train.size()));
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng shuffle_rng(stream_seed(cfg.seed, "shuffle"));

    int step = 0;
    for (int epoch = 1; epoch <= cfg.epochs && log.abort_reason.empty(); ++epoch) {
        for (auto& batch : epoch_batches(order, shuffle_rng, cfg.batch_size)) {
            BatchView bv{&train, batch};
            std::vector<Tensor> snapshot;
            snapshot.reserve(params.size());
            for (auto& [name, p] : params) snapshot.push_back(*p);
            try {
                std::vector<double> b_eff = ones;
                if (cfg.use_factor_b) {
                    ShapleyOptions opts;
                    opts.exact_threshold = cfg.exact_threshold;
                    opts.mc_permutations = cfg.mc_permutations;
                    opts.seed = mix_seed(stream_seed(cfg.seed, "mc-shapley"),
                                         static_cast<uint64_t>(step));
                    opts.soft_value = cfg.soft_value;
                    BatchShapley shap = batch_shapley(model, bv, opts);
                    std::vector<double> u = batch_upperbound(frozen_cache, bv);
                    LceState state = compute_lce_state(factor_a.normalized, shap, u);
                    b_eff = state.b;
                    for (int mm = 0; mm < m; ++mm) {
                        log.factors.push_back(FactorRow{
                            step, mm, state.present_count[static_cast<size_t>(mm)],
                            state.u[static_cast<size_t>(mm)], state.phi[static_cast<size_t>(mm)],
                            state.delta[static_cast<size_t>(mm)], state.b[static_cast<size_t>(mm)]});
                    }
                }

                Tape tape;
                LossBreakdown bd;
                {
                    TapeScope scope(tape);
                    std::vector<Tensor> features = model.encode(bv);
                    Tensor stacked = model.stack_features(features);
                    Tensor task =
                        softmax_cross_entropy(model.task_logits_from(stacked, bv), bv.labels());

                    std::vector<uint64_t> avail = bv.avail_masks();
                    Tensor single = cfg.lambdas.single != 0.0
                                        ? loss_single(model, features, bv.labels(), avail, a_eff, b_eff)
                                        : Tensor::scalar(0.0);
                    Tensor sub = Tensor::scalar(0.0);
                    Tensor aux = Tensor::scalar(0.0);
                    if (need_plan) {
                        SubsetPlan plan = build_subset_plan(
                            avail, plan_cap,
                            mix_seed(stream_seed(cfg.seed, "subset-cap"), static_cast<uint64_t>(step)));
                        if (cfg.lambdas.sub != 0.0) {
                            sub = loss_sub(model, stacked, bv.size(), bv.labels(), plan, cfg.epsilon);
                        }
                        if (cfg.lambdas.aux != 0.0) {
                            aux = loss_aux(model, stacked, bv.size(), plan, a_eff, b_eff,
                                           cfg.epsilon, cfg.aux_norm);
                        }
                    }
                    bd = total_loss(std::move(task), std::move(single), std::move(sub),
                                    std::move(aux), cfg.lambdas);
                }
                tape.backward(bd.total);
                opt->step(params, tape);
                log.losses.push_back(LossRow{step, bd.task_value(), bd.single_value(),
                                             bd.sub_value(), bd.aux_value(), bd.total_value()});
            } catch (const NonFiniteError& e) {
                for (size_t i = 0; i < params.size(); ++i) *params[i].second = snapshot[i];
                log.abort_reason = e.what();
                log.abort_step = step;
                break;
            }
            ++step;
        }
        if (!log.abort_reason.empty()) break;
        if (cfg.eval_every > 0 && epoch % cfg.eval_every == 0 && epoch != cfg.epochs) {
            append_eval(log, model, test, epoch);
        }
        if (cfg.probe_every > 0 && epoch % cfg.probe_every == 0 && epoch != cfg.epochs) {
            append_probes(log, model, train, test, cfg, epoch);
        }
    }
    log.steps = step;

    if (log.abort_reason.empty()) {
        append_eval(log, model, test, cfg.epochs);
        if (cfg.probe_at_end || cfg.probe_every > 0) {
            append_probes(log, model, train, test, cfg, cfg.epochs);
        }
    }

    return TrainResult{std::move(model), std::move(frozen), std::move(log)};
}

}  // namespace mce
