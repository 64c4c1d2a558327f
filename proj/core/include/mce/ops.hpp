#pragma once

#include <vector>

#include "mce/tensor.hpp"

namespace mce {

/// Norm used when comparing reconstructed feature rows against targets.
enum class RowNorm { kMse, kL2 };

// Elementwise / linear algebra. All ops validate shapes, reject non-finite
// outputs and record themselves on the active tape (if any).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor add_bias(const Tensor& x, const Tensor& b);  // row-broadcast [RxC] + [C]
Tensor scale(const Tensor& x, double c);
Tensor relu(const Tensor& x);

/// Affine map x·W + b recorded on the tape.
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);

// Losses and reductions.
Tensor mse(const Tensor& a, const Tensor& b);
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);
Tensor softmax_ce_rows(const Tensor& logits, const std::vector<int>& labels);
Tensor sum(const Tensor& x);
Tensor weighted_sum(const Tensor& x, const std::vector<double>& w);

/// Sum over rows of w_r * norm(pred_row - target_row); target and weights
/// are constants (no gradient flows into them). kMse divides each row's
/// squared error by the column count.
Tensor row_norm_loss(const Tensor& pred, const Tensor& target, const std::vector<double>& row_w,
                     RowNorm norm);

// Structural ops.
Tensor softmax_rows(const Tensor& x);
Tensor mask_rows(const Tensor& x, const std::vector<double>& row_scale);
Tensor take_rows(const Tensor& x, const std::vector<int>& rows);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor stack_rows(const std::vector<Tensor>& parts);  // M of [BxD] -> [(B*M)xD], sample-major
Tensor reshape(const Tensor& x, Shape shape);
Tensor tile_rows(const Tensor& x, int times);

// Block (per-sample) attention primitives over stacked rows: q, k, v carry
// `blocks` independent groups of `m` rows each.
Tensor block_scores(const Tensor& q, const Tensor& k, int blocks);
Tensor block_mix(const Tensor& p, const Tensor& v, int blocks);

/// Copy of x detached from any tape (fresh identity, same values).
Tensor detach(const Tensor& x);

// Non-differentiable helpers.
int argmax_row(const std::vector<double>& values, int row, int cols);
double accuracy(const Tensor& logits, const std::vector<int>& labels);

/// Multi-head self-attention followed by a two-layer feed-forward with a
/// residual connection; preserves the input shape.
struct AttentionParams {
    int heads = 1;
    std::vector<Tensor> wq, wk, wv;  // per head, [D x D/heads]
    Tensor wo, bo;                   // [D x D], [D]
    Tensor w1, b1, w2, b2;           // feed-forward [D x H], [H], [H x D], [D]

    static AttentionParams init(int dim, int heads, int ffn_dim, Rng& rng);
};

Tensor attention_block(const Tensor& x, const AttentionParams& p, int blocks);

}  // namespace mce
