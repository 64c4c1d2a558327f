#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mce/ops.hpp"
#include "mce/synth.hpp"
#include "mce/tensor.hpp"

namespace mce {

struct ModelConfig {
    int modalities = 3;
    int classes = 4;
    int input_dim = 16;
    int feature_dim = 8;
    int heads = 2;
    int ffn_dim = 16;
    double pos_sigma = 0.02;  // init scale of the positional mask tokens

    uint64_t full_mask() const { return (1ull << modalities) - 1; }
    void validate() const;
};

struct DenseLayer {
    Tensor w, b;
    static DenseLayer init(int in, int out, Rng& rng);
};

/// Two dense layers with a ReLU in between.
struct Encoder {
    DenseLayer l1, l2;
    static Encoder init(int in, int hidden, int out, Rng& rng);
    Tensor forward(const Tensor& x) const;
};

/// A batch as consumed by the model: indices into a dataset.
struct BatchView {
    const Dataset* data = nullptr;
    std::vector<int> indices;

    int size() const { return static_cast<int>(indices.size()); }
    uint64_t avail_mask(int i) const { return data->presence.row_mask(indices[static_cast<size_t>(i)]); }
    int label(int i) const { return data->labels[static_cast<size_t>(indices[static_cast<size_t>(i)])]; }
    std::vector<int> labels() const;
    std::vector<uint64_t> avail_masks() const;

    /// Input matrix of one modality, [B x input_dim], absent rows zeroed.
    Tensor modality_input(int m) const;

    static BatchView whole(const Dataset& d);
};

using ParamRefs = std::vector<std::pair<std::string, Tensor*>>;

/// Encode -> reconstruct -> fuse -> decode network over M modalities, plus
/// one auxiliary decoder per modality for direct supervision.
class MultiModalModel {
  public:
    MultiModalModel(ModelConfig cfg, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }

    /// Per-modality features [B x D]; absent slots are zero vectors.
    std::vector<Tensor> encode(const BatchView& batch) const;

    /// Interleaves per-modality features into a [(B*M) x D] stack.
    Tensor stack_features(const std::vector<Tensor>& features) const;

    /// Adds the positional mask tokens and runs the attention block across
    /// the modality axis of every sample; shape preserved.
    Tensor reconstruct(const Tensor& stacked, int batch) const;

    /// Fused representation of each sample using only the modalities in
    /// `subset` (other slots zero-masked before fusion), [B x D].
    Tensor fused_features(const Tensor& stacked, int batch, uint64_t subset) const;

    /// Class logits from the subset-restricted fusion path, [B x C].
    Tensor fuse_logits(const Tensor& stacked, int batch, uint64_t subset) const;

    /// Training-task path: absent slots are filled from the reconstruction
    /// module, present slots keep their raw encodings, then the full-set
    /// fusion produces logits.
    Tensor task_logits(const BatchView& batch) const;

    /// Task path continuation from already-encoded features.
    Tensor task_logits_from(const Tensor& stacked, const BatchView& batch) const;

    /// Auxiliary per-modality decoder on that modality's features.
    Tensor unimodal_logits(int m, const Tensor& features) const;

    const Encoder& encoder(int m) const { return encoders_[static_cast<size_t>(m)]; }
    const Tensor& positional_encoding() const { return e_pos_; }
    const AttentionParams& attention() const { return recon_; }

    /// Stable name -> parameter mapping in registry order.
    ParamRefs params();

  private:
    ModelConfig cfg_;
    std::vector<Encoder> encoders_;
    AttentionParams recon_;
    Tensor e_pos_;  // [M x D] learnable positional encoding / mask token
    DenseLayer fusion_;
    DenseLayer decoder_;
    std::vector<DenseLayer> unimodal_decoders_;
};

/// Standalone single-modality encoder + decoder; pretrained and then kept
/// frozen while the multi-modal model trains.
struct UnimodalModel {
    int modality = -1;
    Encoder enc;
    DenseLayer dec;

    Tensor logits(const Tensor& x) const;
};

/// Frozen-model predictions for a batch restricted to its modality; asking
/// about a sample where the modality is absent is a contract violation.
/// Runs without gradient recording.
Tensor unimodal_predict(const UnimodalModel& model, const BatchView& batch);

}  // namespace mce
