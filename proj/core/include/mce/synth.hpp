#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mce/errors.hpp"

namespace mce {

/// Parameters of the class-conditional linear-Gaussian generator. Each
/// modality draws x = centroid(y) + noise / snr, so per-modality snr is the
/// single knob controlling how informative that channel is.
struct SynthConfig {
    int modalities = 3;
    int classes = 4;
    int input_dim = 16;
    int samples = 2000;
    std::vector<double> snr = {5.0, 2.0, 1.0};
    std::vector<double> missing_rates = {0.2, 0.5, 0.8};
    double centroid_scale = 0.25;  // std of class-centroid coordinates
    uint64_t seed = 42;

    void validate() const;
};

/// Binary modality-availability indicators for a dataset or batch slice.
struct PresenceMatrix {
    int samples = 0;
    int modalities = 0;
    std::vector<uint8_t> e;  // sample-major, samples x modalities

    bool present(int n, int m) const {
        return e[static_cast<size_t>(n) * static_cast<size_t>(modalities) + static_cast<size_t>(m)] != 0;
    }
    int count_modality(int m) const;
    double column_mean(int m) const;
    uint64_t row_mask(int n) const;
    int row_count(int n) const;
};

struct Dataset {
    int modalities = 0;
    int classes = 0;
    int input_dim = 0;
    std::vector<double> inputs;  // sample-major: samples x modalities x input_dim
    PresenceMatrix presence;
    std::vector<int> labels;

    int size() const { return static_cast<int>(labels.size()); }
    const double* input(int n, int m) const {
        return &inputs[(static_cast<size_t>(n) * modalities + static_cast<size_t>(m)) * input_dim];
    }
};

/// Independently drops each (sample, modality) cell with probability
/// rates[m]; rows that come out all-absent are redrawn so every sample
/// keeps at least one modality. Deterministic for a given seed, with
/// per-row streams so redraws stay local.
PresenceMatrix apply_missing(int samples, int modalities, const std::vector<double>& rates,
                             uint64_t seed);

/// Generates a dataset. Class centroids depend only on config.seed, so
/// splits generated with different labels share one underlying task.
Dataset generate(const SynthConfig& config, std::string_view split_label = "");

}  // namespace mce
