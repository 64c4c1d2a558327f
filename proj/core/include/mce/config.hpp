#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mce/model.hpp"
#include "mce/synth.hpp"
#include "mce/trainer.hpp"

namespace mce {

/// Flat `key = value` text under `[section]` headers. Booleans are
/// true/false, lists comma-separated, `#` starts a comment. Unknown keys
/// are rejected when the typed bundle is built (fail-fast).
class ConfigText {
  public:
    static ConfigText parse_file(const std::string& path);
    static ConfigText parse_text(const std::string& text);

    /// Applies a `section.key=value` override.
    void set(const std::string& spec);

    bool has(const std::string& section, const std::string& key) const;
    const std::map<std::pair<std::string, std::string>, std::string>& entries() const {
        return entries_;
    }

    std::string get(const std::string& section, const std::string& key,
                    const std::string& fallback) const;

  private:
    std::map<std::pair<std::string, std::string>, std::string> entries_;
};

/// Everything one experiment needs: data generator, model and trainer.
struct ExperimentConfig {
    SynthConfig data;       // data.samples is the train-split size
    int samples_test = 500;
    ModelConfig model;
    TrainConfig train;

    static ExperimentConfig defaults();
    static ExperimentConfig from(const ConfigText& text);

    void validate() const;

    /// Stable canonical serialization (sections and keys in fixed order,
    /// exact doubles) used for manifests and run-directory hashes.
    std::string canonical_text() const;
    std::string hash_hex() const;

    Dataset make_train_split() const;
    Dataset make_test_split() const;
};

std::string format_double(double v);  // round-trip exact ("%.17g")
double parse_double(const std::string& s, const std::string& field);
long parse_long(const std::string& s, const std::string& field);
bool parse_bool(const std::string& s, const std::string& field);
std::vector<double> parse_double_list(const std::string& s, const std::string& field);

}  // namespace mce
