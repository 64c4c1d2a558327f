#include "mce/synth.hpp"

#include <cmath>

#include "mce/rng.hpp"

namespace mce {

void SynthConfig::validate() const {
    if (modalities < 2) throw ConfigError("data.modalities: need >= 2, got " + std::to_string(modalities));
    if (classes < 2) throw ConfigError("data.classes: need >= 2, got " + std::to_string(classes));
    if (input_dim < 1) throw ConfigError("data.input_dim: need >= 1, got " + std::to_string(input_dim));
    if (samples < 1) throw ConfigError("data.samples: need >= 1, got " + std::to_string(samples));
    if (static_cast<int>(snr.size()) != modalities) {
        throw ConfigError("data.snr: need one value per modality");
    }
    for (double s : snr) {
        if (!(s > 0.0)) throw ConfigError("data.snr: values must be > 0");
    }
    if (static_cast<int>(missing_rates.size()) != modalities) {
        throw ConfigError("data.missing_rates: need one value per modality");
    }
    for (double r : missing_rates) {
        if (!(r >= 0.0 && r < 1.0)) throw ConfigError("data.missing_rates: values must lie in [0, 1)");
    }
    if (!(centroid_scale > 0.0)) throw ConfigError("data.centroid_scale: must be > 0");
}

int PresenceMatrix::count_modality(int m) const {
    int c = 0;
    for (int n = 0; n < samples; ++n) c += present(n, m) ? 1 : 0;
    return c;
}

double PresenceMatrix::column_mean(int m) const {
    return samples == 0 ? 0.0 : static_cast<double>(count_modality(m)) / samples;
}

uint64_t PresenceMatrix::row_mask(int n) const {
    uint64_t mask = 0;
    for (int m = 0; m < modalities; ++m) {
        if (present(n, m)) mask |= 1ull << m;
    }
    return mask;
}

int PresenceMatrix::row_count(int n) const {
    int c = 0;
    for (int m = 0; m < modalities; ++m) c += present(n, m) ? 1 : 0;
    return c;
}

PresenceMatrix apply_missing(int samples, int modalities, const std::vector<double>& rates,
                             uint64_t seed) {
    if (static_cast<int>(rates.size()) != modalities) {
        throw ConfigError("missing_rates: need one rate per modality");
    }
    for (double r : rates) {
        if (!(r >= 0.0 && r < 1.0)) throw ConfigError("missing_rates: values must lie in [0, 1)");
    }
    PresenceMatrix p;
    p.samples = samples;
    p.modalities = modalities;
    p.e.assign(static_cast<size_t>(samples) * modalities, 1);
    const long budget = 10L * samples;
    for (int n = 0; n < samples; ++n) {
        Rng rng(mix_seed(seed, static_cast<uint64_t>(n)));
        long attempts = 0;
        while (true) {
            int kept = 0;
            for (int m = 0; m < modalities; ++m) {
                uint8_t bit = rng.uniform() < rates[static_cast<size_t>(m)] ? 0 : 1;
                p.e[static_cast<size_t>(n) * modalities + m] = bit;
                kept += bit;
            }
            if (kept > 0) break;
            if (++attempts > budget) {
                throw ConfigError("missing_rates: row " + std::to_string(n) +
                                  " could not keep any modality within the resampling budget");
            }
        }
    }
    return p;
}

Dataset generate(const SynthConfig& config, std::string_view split_label) {
    config.validate();

    // Per-class centroids, one matrix per modality, shared across splits.
    Rng centroid_rng(stream_seed(config.seed, "centroids"));
    std::vector<double> centroids(static_cast<size_t>(config.modalities) * config.classes *
                                  config.input_dim);
    for (double& v : centroids) v = config.centroid_scale * centroid_rng.normal();

    Dataset ds;
    ds.modalities = config.modalities;
    ds.classes = config.classes;
    ds.input_dim = config.input_dim;
    ds.labels.resize(static_cast<size_t>(config.samples));
    ds.inputs.resize(static_cast<size_t>(config.samples) * config.modalities * config.input_dim);

    const uint64_t sample_base =
        stream_seed(stream_seed(config.seed, "samples"), split_label);
    for (int n = 0; n < config.samples; ++n) {
        Rng rng(mix_seed(sample_base, static_cast<uint64_t>(n)));
        int y = rng.uniform_int(config.classes);
        ds.labels[static_cast<size_t>(n)] = y;
        for (int m = 0; m < config.modalities; ++m) {
            const double* c = &centroids[(static_cast<size_t>(m) * config.classes + y) * config.input_dim];
            double inv_snr = 1.0 / config.snr[static_cast<size_t>(m)];
            double* x = &ds.inputs[(static_cast<size_t>(n) * config.modalities + m) * config.input_dim];
            for (int d = 0; d < config.input_dim; ++d) x[d] = c[d] + inv_snr * rng.normal();
        }
    }

    ds.presence = apply_missing(config.samples, config.modalities, config.missing_rates,
                                stream_seed(stream_seed(config.seed, "presence"), split_label));
    return ds;
}

}  // namespace mce
