#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mce/lce.hpp"
#include "mce/model.hpp"
#include "mce/optim.hpp"
#include "mce/rce.hpp"
#include "mce/synth.hpp"

namespace mce {

struct TrainConfig {
    int epochs = 40;
    int batch_size = 64;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::kAdam;
    Lambdas lambdas;
    double epsilon = 1e-8;
    int mc_permutations = 100;
    int exact_threshold = 10;
    int subset_cap = 64;  // applies when modalities > 4
    bool use_factor_a = true;
    bool use_factor_b = true;
    bool soft_value = false;
    RowNorm aux_norm = RowNorm::kMse;
    uint64_t seed = 1;
    int pretrain_epochs = 40;
    double pretrain_learning_rate = 0.0;  // <= 0 inherits learning_rate
    int probe_epochs = 60;
    int eval_every = 0;   // epochs between subset evaluations; 0 = final only
    int probe_every = 0;  // epochs between capability probes; 0 = per probe_at_end
    bool probe_at_end = true;

    void validate() const;
};

struct LossRow {
    int step;
    double task, single, sub, aux, total;
};

struct FactorRow {
    int step;
    int modality;
    int present_count;
    double u, phi, delta, b;
};

struct EvalRow {
    int epoch;
    uint64_t subset;  // 0 marks the unweighted average over subsets
    int samples;
    double accuracy;
};

struct ProbeRow {
    int epoch;
    int modality;
    double capability;
    double upperbound;
};

struct RunLog {
    std::vector<LossRow> losses;
    std::vector<FactorRow> factors;
    std::vector<EvalRow> evals;
    std::vector<ProbeRow> probes;
    std::vector<double> factor_a_raw;  // computed once per run
    std::vector<double> factor_a;      // normalized, mean 1
    std::vector<double> frozen_accuracy;  // held-out ceiling per modality
    std::string abort_reason;             // empty when the run completed
    int abort_step = -1;
    int steps = 0;
};

struct TrainResult {
    MultiModalModel model;
    std::vector<UnimodalModel> frozen;
    RunLog log;
};

/// Trains a standalone encoder + decoder on the samples where the modality
/// is present, then freezes it (the caller never updates it again).
UnimodalModel pretrain_unimodal(const Dataset& train, int modality, const ModelConfig& model_cfg,
                                const TrainConfig& cfg);

/// Accuracy of a unimodal model over the samples where its modality occurs.
double unimodal_accuracy(const UnimodalModel& model, const Dataset& data);

std::vector<UnimodalModel> pretrain_all(const Dataset& train, const ModelConfig& model_cfg,
                                        const TrainConfig& cfg);

struct SubsetReport {
    std::vector<EvalRow> rows;  // one per non-empty subset, ascending
    double average = 0.0;       // unweighted mean over subsets
};

/// Per-subset accuracy over the samples where each subset is feasible,
/// plus the unweighted average across all 2^M - 1 subsets.
SubsetReport evaluate_all_subsets(const MultiModalModel& model, const Dataset& data);

/// Trains a fresh linear decoder on a frozen encoder's features and
/// returns held-out accuracy — the capability measure of that encoder.
double probe_capability(const Encoder& encoder, const ModelConfig& model_cfg, const Dataset& train,
                        const Dataset& test, int modality, int epochs, int batch_size, double lr,
                        uint64_t seed);

/// The full joint-optimization loop: dataset factors once per run, then per
/// batch the upper bounds, Shapley sums and incentive factors followed by
/// one optimizer step on the combined objective. Deterministic per seed.
/// A non-finite loss aborts the run and restores the last good parameters.
TrainResult train_mce(const Dataset& train, const Dataset& test, const ModelConfig& model_cfg,
                      const TrainConfig& cfg, const std::vector<UnimodalModel>* pretrained = nullptr);

}  // namespace mce
