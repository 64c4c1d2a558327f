#include "mce/model.hpp"

#include <cmath>

namespace mce {

void ModelConfig::validate() const {
    if (modalities < 2 || modalities > 62) {
        throw ConfigError("model.modalities: need 2..62, got " + std::to_string(modalities));
    }
    if (classes < 2) throw ConfigError("model.classes: need >= 2");
    if (input_dim < 1) throw ConfigError("model.input_dim: need >= 1");
    if (feature_dim < 1) throw ConfigError("model.feature_dim: need >= 1");
    if (heads < 1 || feature_dim % heads != 0) {
        throw ConfigError("model.heads: feature_dim " + std::to_string(feature_dim) +
                          " is not divisible by " + std::to_string(heads));
    }
    if (ffn_dim < 1) throw ConfigError("model.ffn_dim: need >= 1");
}

DenseLayer DenseLayer::init(int in, int out, Rng& rng) {
    return DenseLayer{Tensor::randn({in, out}, rng, std::sqrt(2.0 / (in + out))),
                      Tensor::zeros({out})};
}

Encoder Encoder::init(int in, int hidden, int out, Rng& rng) {
    return Encoder{DenseLayer::init(in, hidden, rng), DenseLayer::init(hidden, out, rng)};
}

Tensor Encoder::forward(const Tensor& x) const {
    return dense(relu(dense(x, l1.w, l1.b)), l2.w, l2.b);
}

std::vector<int> BatchView::labels() const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (int i : indices) out.push_back(data->labels[static_cast<size_t>(i)]);
    return out;
}

std::vector<uint64_t> BatchView::avail_masks() const {
    std::vector<uint64_t> out;
    out.reserve(indices.size());
    for (int i : indices) out.push_back(data->presence.row_mask(i));
    return out;
}

Tensor BatchView::modality_input(int m) const {
    const int b = size(), d = data->input_dim;
    std::vector<double> v(static_cast<size_t>(b) * d, 0.0);
    for (int i = 0; i < b; ++i) {
        int n = indices[static_cast<size_t>(i)];
        if (!data->presence.present(n, m)) continue;
        const double* src = data->input(n, m);
        for (int j = 0; j < d; ++j) v[static_cast<size_t>(i) * d + j] = src[j];
    }
    return Tensor({b, d}, std::move(v));
}

BatchView BatchView::whole(const Dataset& d) {
    BatchView b;
    b.data = &d;
    b.indices.resize(static_cast<size_t>(d.size()));
    for (int i = 0; i < d.size(); ++i) b.indices[static_cast<size_t>(i)] = i;
    return b;
}

MultiModalModel::MultiModalModel(ModelConfig cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(stream_seed(seed, "model-init"));
    for (int m = 0; m < cfg_.modalities; ++m) {
        encoders_.push_back(Encoder::init(cfg_.input_dim, cfg_.feature_dim, cfg_.feature_dim, rng));
    }
    recon_ = AttentionParams::init(cfg_.feature_dim, cfg_.heads, cfg_.ffn_dim, rng);
    e_pos_ = Tensor::randn({cfg_.modalities, cfg_.feature_dim}, rng, cfg_.pos_sigma);
    fusion_ = DenseLayer::init(cfg_.modalities * cfg_.feature_dim, cfg_.feature_dim, rng);
    decoder_ = DenseLayer::init(cfg_.feature_dim, cfg_.classes, rng);
    for (int m = 0; m < cfg_.modalities; ++m) {
        unimodal_decoders_.push_back(DenseLayer::init(cfg_.feature_dim, cfg_.classes, rng));
    }
}

std::vector<Tensor> MultiModalModel::encode(const BatchView& batch) const {
    std::vector<Tensor> features;
    features.reserve(static_cast<size_t>(cfg_.modalities));
    const int b = batch.size();
    for (int m = 0; m < cfg_.modalities; ++m) {
        Tensor h = encoders_[static_cast<size_t>(m)].forward(batch.modality_input(m));
        std::vector<double> present(static_cast<size_t>(b));
        for (int i = 0; i < b; ++i) {
            present[static_cast<size_t>(i)] =
                batch.data->presence.present(batch.indices[static_cast<size_t>(i)], m) ? 1.0 : 0.0;
        }
        features.push_back(mask_rows(h, present));
    }
    return features;
}

Tensor MultiModalModel::stack_features(const std::vector<Tensor>& features) const {
    if (static_cast<int>(features.size()) != cfg_.modalities) {
        throw ShapeError("stack_features: expected " + std::to_string(cfg_.modalities) +
                         " feature blocks, got " + std::to_string(features.size()));
    }
    return stack_rows(features);
}

Tensor MultiModalModel::reconstruct(const Tensor& stacked, int batch) const {
    if (stacked.rows() != batch * cfg_.modalities || stacked.cols() != cfg_.feature_dim) {
        throw ShapeError("reconstruct: stack " + shape_str(stacked.shape()) +
                         " does not match batch " + std::to_string(batch));
    }
    Tensor with_pos = add(stacked, tile_rows(e_pos_, batch));
    return attention_block(with_pos, recon_, batch);
}

Tensor MultiModalModel::fused_features(const Tensor& stacked, int batch, uint64_t subset) const {
    if (subset == 0) throw ContractError("fused_features: empty modality subset");
    if (subset & ~cfg_.full_mask()) {
        throw ContractError("fused_features: subset includes unknown modalities");
    }
    const int m = cfg_.modalities;
    Tensor selected = stacked;
    if (subset != cfg_.full_mask()) {
        std::vector<double> slot(static_cast<size_t>(batch) * m);
        for (int r = 0; r < batch * m; ++r) {
            slot[static_cast<size_t>(r)] = (subset >> (r % m)) & 1ull ? 1.0 : 0.0;
        }
        selected = mask_rows(stacked, slot);
    }
    Tensor concat = reshape(selected, {batch, m * cfg_.feature_dim});
    return relu(dense(concat, fusion_.w, fusion_.b));
}

Tensor MultiModalModel::fuse_logits(const Tensor& stacked, int batch, uint64_t subset) const {
    return dense(fused_features(stacked, batch, subset), decoder_.w, decoder_.b);
}

Tensor MultiModalModel::task_logits(const BatchView& batch) const {
    return task_logits_from(stack_features(encode(batch)), batch);
}

Tensor MultiModalModel::task_logits_from(const Tensor& stacked, const BatchView& batch) const {
    const int b = batch.size(), m = cfg_.modalities;
    Tensor completed = reconstruct(stacked, b);
    std::vector<double> present(static_cast<size_t>(b) * m), absent(static_cast<size_t>(b) * m);
    for (int i = 0; i < b; ++i) {
        for (int mm = 0; mm < m; ++mm) {
            bool have = batch.data->presence.present(batch.indices[static_cast<size_t>(i)], mm);
            present[static_cast<size_t>(i) * m + mm] = have ? 1.0 : 0.0;
            absent[static_cast<size_t>(i) * m + mm] = have ? 0.0 : 1.0;
        }
    }
    Tensor mixed = add(mask_rows(stacked, present), mask_rows(completed, absent));
    return fuse_logits(mixed, b, cfg_.full_mask());
}

Tensor MultiModalModel::unimodal_logits(int m, const Tensor& features) const {
    if (m < 0 || m >= cfg_.modalities) {
        throw IndexError("unimodal_logits: modality " + std::to_string(m) + " out of range");
    }
    const auto& d = unimodal_decoders_[static_cast<size_t>(m)];
    return dense(features, d.w, d.b);
}

ParamRefs MultiModalModel::params() {
    ParamRefs refs;
    auto push = [&refs](const std::string& name, Tensor& t) { refs.emplace_back(name, &t); };
    for (int m = 0; m < cfg_.modalities; ++m) {
        auto& e = encoders_[static_cast<size_t>(m)];
        std::string p = "encoder" + std::to_string(m);
        push(p + ".l1.w", e.l1.w);
        push(p + ".l1.b", e.l1.b);
        push(p + ".l2.w", e.l2.w);
        push(p + ".l2.b", e.l2.b);
    }
    for (int h = 0; h < recon_.heads; ++h) {
        std::string p = "recon.head" + std::to_string(h);
        push(p + ".wq", recon_.wq[static_cast<size_t>(h)]);
        push(p + ".wk", recon_.wk[static_cast<size_t>(h)]);
        push(p + ".wv", recon_.wv[static_cast<size_t>(h)]);
    }
    push("recon.wo", recon_.wo);
    push("recon.bo", recon_.bo);
    push("recon.ffn.w1", recon_.w1);
    push("recon.ffn.b1", recon_.b1);
    push("recon.ffn.w2", recon_.w2);
    push("recon.ffn.b2", recon_.b2);
    push("recon.e_pos", e_pos_);
    push("fusion.w", fusion_.w);
    push("fusion.b", fusion_.b);
    push("decoder.w", decoder_.w);
    push("decoder.b", decoder_.b);
    for (int m = 0; m < cfg_.modalities; ++m) {
        std::string p = "unimodal_decoder" + std::to_string(m);
        push(p + ".w", unimodal_decoders_[static_cast<size_t>(m)].w);
        push(p + ".b", unimodal_decoders_[static_cast<size_t>(m)].b);
    }
    return refs;
}

Tensor UnimodalModel::logits(const Tensor& x) const { return dense(enc.forward(x), dec.w, dec.b); }

Tensor unimodal_predict(const UnimodalModel& model, const BatchView& batch) {
    for (int i = 0; i < batch.size(); ++i) {
        int n = batch.indices[static_cast<size_t>(i)];
        if (!batch.data->presence.present(n, model.modality)) {
            throw ContractError("unimodal_predict: sample " + std::to_string(n) +
                                " lacks modality " + std::to_string(model.modality));
        }
    }
    TapeSuspend no_grad;
    return model.logits(batch.modality_input(model.modality));
}

}  // namespace mce
