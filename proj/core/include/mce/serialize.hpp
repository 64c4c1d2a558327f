#pragma once

#include <cstdint>
#include <string>

#include "mce/model.hpp"
#include "mce/synth.hpp"

namespace mce {

/// FNV-1a content hash of a file, hex-encoded.
std::string file_hash_hex(const std::string& path);

/// Content fingerprint of an in-memory dataset (inputs, presence, labels).
std::string dataset_fingerprint(const Dataset& ds);

/// 64-bit hash of every parameter's raw bytes, in registry order.
uint64_t params_hash(const ParamRefs& params);
ParamRefs unimodal_params(UnimodalModel& model);

// Checkpoints: <prefix>.manifest (text: dims, seed, step, parameter shapes)
// plus <prefix>.bin (raw little-endian doubles in manifest order).
void save_checkpoint(const std::string& prefix, MultiModalModel& model, uint64_t seed, int step);
MultiModalModel load_checkpoint(const std::string& prefix);

void save_unimodal(const std::string& prefix, UnimodalModel& model, const ModelConfig& cfg);
UnimodalModel load_unimodal(const std::string& prefix, const ModelConfig& cfg);

// Datasets: <prefix>.meta (dims, seed, rates) plus <prefix>.bin holding the
// inputs, the presence matrix and the labels.
void save_dataset(const std::string& prefix, const Dataset& ds, const SynthConfig& cfg,
                  const std::string& split);
Dataset load_dataset(const std::string& prefix);

/// Wide-format CSV export of a dataset for inspection.
void dataset_to_csv(const std::string& path, const Dataset& ds);

}  // namespace mce
