#include "mce/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace mce {

namespace {

constexpr double kProbFloor = 1e-12;

void require_2d(const Tensor& t, const char* op) {
    if (t.ndim() != 2) {
        throw ShapeError(std::string(op) + ": expected a 2-D operand, got " + shape_str(t.shape()));
    }
}

/// Wraps value computation + optional tape recording.
Tensor make_node(Shape shape, std::vector<double> values, std::vector<const Tensor*> inputs,
                 Tape::BackwardFn fn) {
    Tensor out(std::move(shape), std::move(values));
    if (Tape* tape = Tape::active()) {
        std::vector<int> ids;
        ids.reserve(inputs.size());
        for (const Tensor* t : inputs) ids.push_back(tape->node_of(*t));
        tape->record(out, std::move(ids), std::move(fn));
    }
    return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
            double x = av[static_cast<size_t>(i) * k + kk];
            if (x == 0.0) continue;
            const double* brow = &bv[static_cast<size_t>(kk) * n];
            double* orow = &out[static_cast<size_t>(i) * n];
            for (int j = 0; j < n; ++j) orow[j] += x * brow[j];
        }
    }
    return make_node({m, n}, std::move(out), {&a, &b},
                     [a, b, m, k, n](Tape& t, const std::vector<double>& g, const std::vector<int>& in) {
                         auto& ga = t.grad_buffer(in[0]);
                         auto& gb = t.grad_buffer(in[1]);
                         const auto& av = a.values();
                         const auto& bv = b.values();
                         for (int i = 0; i < m; ++i) {
                             for (int j = 0; j < n; ++j) {
                                 double gij = g[static_cast<size_t>(i) * n + j];
                                 if (gij == 0.0) continue;
                                 for (int kk = 0; kk < k; ++kk) {
                                     ga[static_cast<size_t>(i) * k + kk] += gij * bv[static_cast<size_t>(kk) * n + j];
                                     gb[static_cast<size_t>(kk) * n + j] += gij * av[static_cast<size_t>(i) * k + kk];
                                 }
                             }
                         }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shapes disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    std::vector<double> out(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return make_node(a.shape(), std::move(out), {&a, &b},
                     [](Tape& t, const std::vector<double>& g, const std::vector<int>& in) {
                         auto& ga = t.grad_buffer(in[0]);
                         auto& gb = t.grad_buffer(in[1]);
                         for (size_t i = 0; i < g.size(); ++i) {
                             ga[i] += g[i];
                             gb[i] += g[i];
                         }
                     });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
    require_2d(x, "add_bias");
    if (b.ndim() != 1 || b.dim(0) != x.cols()) {
        throw ShapeError("add_bias: bias " + shape_str(b.shape()) + " does not match columns of " +
                         shape_str(x.shape()));
    }
    const int r = x.rows(), c = x.cols();
    std::vector<double> out(x.values());
    const auto& bv = b.values();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[static_cast<size_t>(i) * c + j] += bv[static_cast<size_t>(j)];
    return make_node(x.shape(), std::move(out), {&x, &b},
                     [r, c](Tape& t, const std::vector<double>& g, const std::vector<int>& in) {
                         auto& gx = t.grad_buffer(in[0]);
                         auto& gb = t.grad_buffer(in[1]);
                         for (int i = 0; i < r; ++i) {
                             for (int j = 0; j < c; ++j) {
                                 double v = g[static_cast<size_t>(i) * c + j];
                                 gx[static_cast<size_t>(i) * c + j] += v;
                                 gb[static_cast<size_t>(j)] += v;
                             }
                         }
                     });
}

Tensor scale(const Tensor& x, double c) {
    std::vector<double> out(x.values());
    for (double& v : out) v *= c;
    return make_node(x.shape(), std::move(out), {&x},
                     [c](Tape& t, const std::vector<double>& g, const std::vector<int>& in) {
                         auto& gx = t.grad_buffer(in[0]);
                         for (size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
                     });
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.values());
    for (double& v : out) v = v > 0.0 ? v : 0.0;  // subgradient at 0 is 0
    return make_node(x.shape(), std::move(out), {&x},
                     [x](Tape& t, const std::vector<double>& g, const std::vector<int>& in) {
                         auto& gx = t.grad_buffer(in[0]);
                         const auto& xv = x.values();
                         for (size_t i = 0; i < g.size(); ++i) {
                             if (xv[i] > 0.0) gx[i] += g[i];
                         }
                     });
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.ndim() != 2 || w.ndim() != 2 || x.cols() != w.rows()) {
        throw ShapeError("dense: x " + shape_str(x.shape()) + " incompatible with weights " +
                         shape_str(w.shape()));
    }
    return add_bias(matmul(x, w), b);
}

Tensor mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("mse: shapes disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const auto& av = a.values();
    const auto& bv = b.values();
    const double n = static_cast<double>(av.size());
    double acc = 0.0;
    for (size_t i = 0; i < av.size(); ++i) {
        double d = av[i] - bv[i];
        acc += d * d;
    }
    return make_node({1}, {acc / n}, {&a, &b},
                     [a, b, n](Tape& t, const std::vector<double>& g, const std::vector<int>& in) {
                         auto& ga = t.grad_buffer(in[0]);
                         auto& gb = t.grad_buffer(in[1]);
                         const auto& av = a.values();
                         const auto& bv = b.values();
                         double s = 2.0 * g[0] / n;
                         for (size_t i = 0; i < av.size(); ++i) {
                             double d = s * (av[i] - bv[i]);
                             ga[i] += d;
                             gb[i] -= d;
                         }
                     });
}

namespace {

/// Row-stable softmax probabilities of a 2-D logits tensor.
std::vector<double> softmax_values(const Tensor& logits) {
    const int r = logits.rows(), c = logits.cols();
    const auto& lv = logits.values();
    std::vector<double> p(lv.size());
    for (int i = 0; i < r; ++i) {
        const double* row = &lv[static_cast<size_t>(i) * c];
        double mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        double* prow = &p[static_cast<size_t>(i) * c];
        for (int j = 0; j < c; ++j) {
            prow[j] = std::exp(row[j] - mx);
            z += prow[j];
        }
        for (int j = 0; j < c; ++j) prow[j] /= z;
    }
    return p;
}

void check_labels(const std::vector<int>& labels, int rows, int classes, const char* op) {
    if (static_cast<int>(labels.size()) != rows) {
        throw ShapeError(std::string(op) + ": got " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(rows) + " rows");
    }
    for (int y : labels) {
        if (y < 0 || y >= classes) {
            throw IndexError(std::string(op) + ": label " + std::to_string(y) +
                             " outside [0, " + std::to_string(classes) + ")");
        }
    }
}

}  // namespace

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    require_2d(logits, "softmax_cross_entropy");
    const int r = logits.rows(), c = logits.cols();
    check_labels(labels, r, c, "softmax_cross_entropy");
    auto p = softmax_values(logits);
    double loss = 0.0;
    for (int i = 0; i < r; ++i) {
        loss -= std::log(std::max(p[static_cast<size_t>(i) * c + labels[static_cast<size_t>(i)]], kProbFloor));
    }
    loss /= static_cast<double>(r);
    return make_node({1}, {loss}, {&logits},
                     [p = std::move(p), labels, r, c](Tape& t, const std::vector<double>& g,
                                                      const std::vector<int>& in) {
                         auto& gx = t.grad_buffer(in[0]);
                         double s = g[0] / static_cast<double>(r);
                         for (int i = 0; i < r; ++i) {
                             for (int j = 0; j < c; ++j) {
                                 double d = p[static_cast<size_t>(i) * c + j];
                                 if (j == labels[static_cast<size_t>(i)]) d -= 1.0;
                                 gx[static_cast<size_t>(i) * c + j] += s * d;
                             }
                         }
                     });
}

Tensor softmax_ce_rows(const Tensor& logits, const std::vector<int>& labels) {
    require_2d(logits, "softmax_ce_rows");
    const int r = logits.rows(), c = logits.cols();
    check_labels(labels, r, c, "softmax_ce_rows");
    auto p = softmax_values(logits);
    std::vector<double> out(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) {
        out[static_cast<size_t>(i)] =
            -std::log(std::max(p[static_cast<size_t>(i) * c + labels[static_cast<size_t>(i)]], kProbFloor));
    }
    return make_node({r}, std::move(out), {&logits},
                     [p = std::move(p), labels, r, c](Tape& t, const std::vector<double>& g,
                                                      const std::vector<int>& in) {
                         auto& gx = t.grad_buffer(in[0]);
                         for (int i = 0; i < r; ++i) {
                             double s = g[static_cast<size_t>(i)];
                             if (s == 0.0) continue;
                             for (int j = 0; j < c; ++j) {
                                 double d = p[static_cast<size_t>(i) * c + j];
                                 if (j == labels[static_cast<size_t>(i)]) d -= 1.0;
                                 gx[static_cast<size_t>(i) * c + j] += s * d;
                             }
                         }
                     });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    return make_node({1}, {acc}, {&x},
                     [](Tape& t, const std::vector<double>& g, const std::vector<int>& in) {
                         auto& gx = t.grad_buffer(in[0]);
                         for (double& v : gx) v += g[0];
                     });
}

Tensor weighted_sum(const Tensor& x, const std::vector<double>& w) {
    if (w.size() != static_cast<size_t>(x.size())) {
        throw ShapeError("weighted_sum: weight count " + std::to_string(w.size()) +
                         " does not match tensor size " + std::to_string(x.size()));
    }
    double acc = 0.0;
    const auto& xv = x.values();
    for (size_t i = 0; i < w.size(); ++i) acc += xv[i] * w[i];
    return make_node({1}, {acc}, {&x},
                     [w](Tape& t, const std::vector<double>& g, const std::vector<int>& in) {
                         auto& gx = t.grad_buffer(in[0]);
                         for (size_t i = 0; i < w.size(); ++i) gx[i] += g[0] * w[i];
                     });
}

Tensor row_norm_loss(const Tensor& pred, const Tensor& target, const std::vector<double>& row_w,
                     RowNorm norm) {
    require_2d(pred, "row_norm_loss");
    if (pred.shape() != target.shape()) {
        throw ShapeError("row_norm_loss: prediction " + shape_str(pred.shape()) +
                         " does not match target " + shape_str(target.shape()));
    }
    const int r = pred.rows(), c = pred.cols();
    if (row_w.size() != static_cast<size_t>(r)) {
        throw ShapeError("row_norm_loss: got " + std::to_string(row_w.size()) + " weights for " +
                         std::to_string(r) + " rows");
    }
    const auto& pv = pred.values();
    const auto& tv = target.values();
    double acc = 0.0;
    std::vector<double> row_err(static_cast<size_t>(r), 0.0);  // cached for the L2 backward
    for (int i = 0; i < r; ++i) {
        if (row_w[static_cast<size_t>(i)] == 0.0) continue;
        double sq = 0.0;
        for (int j = 0; j < c; ++j) {
            double d = pv[static_cast<size_t>(i) * c + j] - tv[static_cast<size_t>(i) * c + j];
            sq += d * d;
        }
        double e = norm == RowNorm::kMse ? sq / c : std::sqrt(sq);
        row_err[static_cast<size_t>(i)] = e;
        acc += row_w[static_cast<size_t>(i)] * e;
    }
    Tensor target_copy = target;  // values only; no gradient path
    return make_node({1}, {acc}, {&pred},
                     [pred, target_copy, row_w, row_err = std::move(row_err), r, c, norm](
                         Tape& t, const std::vector<double>& g, const std::vector<int>& in) {
                         auto& gp = t.grad_buffer(in[0]);
                         const auto& pv = pred.values();
                         const auto& tv = target_copy.values();
                         for (int i = 0; i < r; ++i) {
                             double w = row_w[static_cast<size_t>(i)];
                             if (w == 0.0) continue;
                             for (int j = 0; j < c; ++j) {
                                 size_t k = static_cast<size_t>(i) * c + j;
                                 double d = pv[k] - tv[k];
                                 if (norm == RowNorm::kMse) {
                                     gp[k] += g[0] * w * 2.0 * d / c;
                                 } else {
                                     double e = std::max(row_err[static_cast<size_t>(i)], 1e-12);
                                     gp[k] += g[0] * w * d / e;
                                 }
                             }
                         }
                     });
}

Tensor softmax_rows(const Tensor& x) {
    require_2d(x, "softmax_rows");
    auto p = softmax_values(x);
    const int r = x.rows(), c = x.cols();
    std::vector<double> out(p);
    return make_node(x.shape(), std::move(out), {&x},
                     [p = std::move(p), r, c](Tape& t, const std::vector<double>& g,
                                              const std::vector<int>& in) {
                         auto& gx = t.grad_buffer(in[0]);
                         for (int i = 0; i < r; ++i) {
                             double dot = 0.0;
                             for (int j = 0; j < c; ++j)
                                 dot += g[static_cast<size_t>(i) * c + j] * p[static_cast<size_t>(i) * c + j];
                             for (int j = 0; j < c; ++j) {
                                 size_t k = static_cast<size_t>(i) * c + j;
                                 gx[k] += p[k] * (g[k] - dot);
                             }
                         }
                     });
}

Tensor mask_rows(const Tensor& x, const std::vector<double>& row_scale) {
    require_2d(x, "mask_rows");
    const int r = x.rows(), c = x.cols();
    if (row_scale.size() != static_cast<size_t>(r)) {
        throw ShapeError("mask_rows: got " + std::to_string(row_scale.size()) + " scales for " +
                         std::to_string(r) + " rows");
    }
    std::vector<double> out(x.values());
    for (int i = 0; i < r; ++i) {
        double s = row_scale[static_cast<size_t>(i)];
        for (int j = 0; j < c; ++j) out[static_cast<size_t>(i) * c + j] *= s;
    }
    return make_node(x.shape(), std::move(out), {&x},
                     [row_scale, r, c](Tape& t, const std::vector<double>& g, const std::vector<int>& in) {
                         auto& gx = t.grad_buffer(in[0]);
                         for (int i = 0; i < r; ++i) {
                             double s = row_scale[static_cast<size_t>(i)];
                             if (s == 0.0) continue;
                             for (int j = 0; j < c; ++j) {
                                 size_t k = static_cast<size_t>(i) * c + j;
                                 gx[k] += s * g[k];
                             }
                         }
                     });
}

Tensor take_rows(const Tensor& x, const std::vector<int>& rows) {
    require_2d(x, "take_rows");
    const int r = x.rows(), c = x.cols();
    for (int i : rows) {
        if (i < 0 || i >= r) {
            throw IndexError("take_rows: row " + std::to_string(i) + " outside [0, " +
                             std::to_string(r) + ")");
        }
    }
    const int n = static_cast<int>(rows.size());
    const auto& xv = x.values();
    std::vector<double> out(static_cast<size_t>(n) * c);
    for (int i = 0; i < n; ++i) {
        std::memcpy(&out[static_cast<size_t>(i) * c], &xv[static_cast<size_t>(rows[static_cast<size_t>(i)]) * c],
                    sizeof(double) * static_cast<size_t>(c));
    }
    return make_node({n, c}, std::move(out), {&x},
                     [rows, n, c](Tape& t, const std::vector<double>& g, const std::vector<int>& in) {
                         auto& gx = t.grad_buffer(in[0]);
                         for (int i = 0; i < n; ++i) {
                             size_t src = static_cast<size_t>(i) * c;
                             size_t dst = static_cast<size_t>(rows[static_cast<size_t>(i)]) * c;
                             for (int j = 0; j < c; ++j) gx[dst + j] += g[src + j];
                         }
                     });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no operands");
    const int r = parts[0].rows();
    int total = 0;
    for (const auto& p : parts) {
        require_2d(p, "concat_cols");
        if (p.rows() != r) {
            throw ShapeError("concat_cols: row counts disagree: " + shape_str(parts[0].shape()) +
                             " vs " + shape_str(p.shape()));
        }
        total += p.cols();
    }
    std::vector<double> out(static_cast<size_t>(r) * total);
    int off = 0;
    for (const auto& p : parts) {
        const int c = p.cols();
        const auto& pv = p.values();
        for (int i = 0; i < r; ++i) {
            std::memcpy(&out[static_cast<size_t>(i) * total + off], &pv[static_cast<size_t>(i) * c],
                        sizeof(double) * static_cast<size_t>(c));
        }
        off += c;
    }
    std::vector<const Tensor*> ins;
    std::vector<int> widths;
    for (const auto& p : parts) {
        ins.push_back(&p);
        widths.push_back(p.cols());
    }
    return make_node({r, total}, std::move(out), std::move(ins),
                     [widths, r, total](Tape& t, const std::vector<double>& g, const std::vector<int>& in) {
                         int off = 0;
                         for (size_t k = 0; k < in.size(); ++k) {
                             auto& gp = t.grad_buffer(in[k]);
                             const int c = widths[k];
                             for (int i = 0; i < r; ++i)
                                 for (int j = 0; j < c; ++j)
                                     gp[static_cast<size_t>(i) * c + j] +=
                                         g[static_cast<size_t>(i) * total + off + j];
                             off += c;
                         }
                     });
}

Tensor stack_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("stack_rows: no operands");
    const int b = parts[0].rows(), c = parts[0].cols();
    for (const auto& p : parts) {
        require_2d(p, "stack_rows");
        if (p.rows() != b || p.cols() != c) {
            throw ShapeError("stack_rows: operand shapes disagree: " + shape_str(parts[0].shape()) +
                             " vs " + shape_str(p.shape()));
        }
    }
    const int m = static_cast<int>(parts.size());
    std::vector<double> out(static_cast<size_t>(b) * m * c);
    for (int n = 0; n < b; ++n) {
        for (int i = 0; i < m; ++i) {
            std::memcpy(&out[(static_cast<size_t>(n) * m + i) * c],
                        &parts[static_cast<size_t>(i)].values()[static_cast<size_t>(n) * c],
                        sizeof(double) * static_cast<size_t>(c));
        }
    }
    std::vector<const Tensor*> ins;
    for (const auto& p : parts) ins.push_back(&p);
    return make_node({b * m, c}, std::move(out), std::move(ins),
                     [b, m, c](Tape& t, const std::vector<double>& g, const std::vector<int>& in) {
                         for (int i = 0; i < m; ++i) {
                             auto& gp = t.grad_buffer(in[static_cast<size_t>(i)]);
                             for (int n = 0; n < b; ++n) {
                                 size_t src = (static_cast<size_t>(n) * m + i) * c;
                                 size_t dst = static_cast<size_t>(n) * c;
                                 for (int j = 0; j < c; ++j) gp[dst + j] += g[src + j];
                             }
                         }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_size(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> out(x.values());
    return make_node(std::move(shape), std::move(out), {&x},
                     [](Tape& t, const std::vector<double>& g, const std::vector<int>& in) {
                         auto& gx = t.grad_buffer(in[0]);
                         for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                     });
}

Tensor tile_rows(const Tensor& x, int times) {
    require_2d(x, "tile_rows");
    if (times < 1) throw ContractError("tile_rows: times must be >= 1");
    const int r = x.rows(), c = x.cols();
    std::vector<double> out(static_cast<size_t>(r) * times * c);
    for (int k = 0; k < times; ++k) {
        std::memcpy(&out[static_cast<size_t>(k) * r * c], x.values().data(),
                    sizeof(double) * static_cast<size_t>(r) * c);
    }
    return make_node({r * times, c}, std::move(out), {&x},
                     [r, c, times](Tape& t, const std::vector<double>& g, const std::vector<int>& in) {
                         auto& gx = t.grad_buffer(in[0]);
                         for (int k = 0; k < times; ++k) {
                             size_t off = static_cast<size_t>(k) * r * c;
                             for (size_t i = 0; i < static_cast<size_t>(r) * c; ++i) gx[i] += g[off + i];
                         }
                     });
}

Tensor block_scores(const Tensor& q, const Tensor& k, int blocks) {
    require_2d(q, "block_scores");
    require_2d(k, "block_scores");
    if (q.shape() != k.shape()) {
        throw ShapeError("block_scores: q " + shape_str(q.shape()) + " vs k " + shape_str(k.shape()));
    }
    if (blocks < 1 || q.rows() % blocks != 0) {
        throw ShapeError("block_scores: " + std::to_string(q.rows()) + " rows not divisible into " +
                         std::to_string(blocks) + " blocks");
    }
    const int m = q.rows() / blocks, d = q.cols();
    const auto& qv = q.values();
    const auto& kv = k.values();
    std::vector<double> out(static_cast<size_t>(blocks) * m * m, 0.0);
    for (int b = 0; b < blocks; ++b) {
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < m; ++j) {
                double acc = 0.0;
                const double* qi = &qv[(static_cast<size_t>(b) * m + i) * d];
                const double* kj = &kv[(static_cast<size_t>(b) * m + j) * d];
                for (int dd = 0; dd < d; ++dd) acc += qi[dd] * kj[dd];
                out[(static_cast<size_t>(b) * m + i) * m + j] = acc;
            }
        }
    }
    return make_node({blocks * m, m}, std::move(out), {&q, &k},
                     [q, k, blocks, m, d](Tape& t, const std::vector<double>& g, const std::vector<int>& in) {
                         auto& gq = t.grad_buffer(in[0]);
                         auto& gk = t.grad_buffer(in[1]);
                         const auto& qv = q.values();
                         const auto& kv = k.values();
                         for (int b = 0; b < blocks; ++b) {
                             for (int i = 0; i < m; ++i) {
                                 for (int j = 0; j < m; ++j) {
                                     double gij = g[(static_cast<size_t>(b) * m + i) * m + j];
                                     if (gij == 0.0) continue;
                                     size_t qi = (static_cast<size_t>(b) * m + i) * d;
                                     size_t kj = (static_cast<size_t>(b) * m + j) * d;
                                     for (int dd = 0; dd < d; ++dd) {
                                         gq[qi + dd] += gij * kv[kj + dd];
                                         gk[kj + dd] += gij * qv[qi + dd];
                                     }
                                 }
                             }
                         }
                     });
}

Tensor block_mix(const Tensor& p, const Tensor& v, int blocks) {
    require_2d(p, "block_mix");
    require_2d(v, "block_mix");
    if (blocks < 1 || p.rows() % blocks != 0 || v.rows() != p.rows()) {
        throw ShapeError("block_mix: weights " + shape_str(p.shape()) + " incompatible with values " +
                         shape_str(v.shape()));
    }
    const int m = p.rows() / blocks, d = v.cols();
    if (p.cols() != m) {
        throw ShapeError("block_mix: weight width " + std::to_string(p.cols()) +
                         " does not equal block size " + std::to_string(m));
    }
    const auto& pv = p.values();
    const auto& vv = v.values();
    std::vector<double> out(static_cast<size_t>(blocks) * m * d, 0.0);
    for (int b = 0; b < blocks; ++b) {
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < m; ++j) {
                double w = pv[(static_cast<size_t>(b) * m + i) * m + j];
                if (w == 0.0) continue;
                const double* vr = &vv[(static_cast<size_t>(b) * m + j) * d];
                double* orow = &out[(static_cast<size_t>(b) * m + i) * d];
                for (int dd = 0; dd < d; ++dd) orow[dd] += w * vr[dd];
            }
        }
    }
    return make_node({blocks * m, d}, std::move(out), {&p, &v},
                     [p, v, blocks, m, d](Tape& t, const std::vector<double>& g, const std::vector<int>& in) {
                         auto& gp = t.grad_buffer(in[0]);
                         auto& gv = t.grad_buffer(in[1]);
                         const auto& pv = p.values();
                         const auto& vv = v.values();
                         for (int b = 0; b < blocks; ++b) {
                             for (int i = 0; i < m; ++i) {
                                 const double* gi = &g[(static_cast<size_t>(b) * m + i) * d];
                                 for (int j = 0; j < m; ++j) {
                                     size_t pij = (static_cast<size_t>(b) * m + i) * m + j;
                                     size_t vj = (static_cast<size_t>(b) * m + j) * d;
                                     double acc = 0.0;
                                     for (int dd = 0; dd < d; ++dd) {
                                         acc += gi[dd] * vv[vj + dd];
                                         gv[vj + dd] += pv[pij] * gi[dd];
                                     }
                                     gp[pij] += acc;
                                 }
                             }
                         }
                     });
}

Tensor detach(const Tensor& x) {
    return Tensor(x.shape(), x.values());  // fresh identity, never recorded
}

int argmax_row(const std::vector<double>& values, int row, int cols) {
    int best = 0;
    const double* p = &values[static_cast<size_t>(row) * cols];
    for (int j = 1; j < cols; ++j) {
        if (p[j] > p[best]) best = j;  // ties resolve to the lowest index
    }
    return best;
}

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
    const int r = logits.rows(), c = logits.cols();
    if (static_cast<int>(labels.size()) != r) {
        throw ShapeError("accuracy: got " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(r) + " rows");
    }
    if (r == 0) return 0.0;
    int hit = 0;
    for (int i = 0; i < r; ++i) {
        if (argmax_row(logits.values(), i, c) == labels[static_cast<size_t>(i)]) ++hit;
    }
    return static_cast<double>(hit) / r;
}

AttentionParams AttentionParams::init(int dim, int heads, int ffn_dim, Rng& rng) {
    if (heads < 1 || dim % heads != 0) {
        throw ConfigError("attention heads: feature dim " + std::to_string(dim) +
                          " is not divisible by " + std::to_string(heads));
    }
    AttentionParams p;
    p.heads = heads;
    const int dh = dim / heads;
    const double s_proj = 1.0 / std::sqrt(static_cast<double>(dim));
    for (int h = 0; h < heads; ++h) {
        p.wq.push_back(Tensor::randn({dim, dh}, rng, s_proj));
        p.wk.push_back(Tensor::randn({dim, dh}, rng, s_proj));
        p.wv.push_back(Tensor::randn({dim, dh}, rng, s_proj));
    }
    p.wo = Tensor::randn({dim, dim}, rng, s_proj);
    p.bo = Tensor::zeros({dim});
    p.w1 = Tensor::randn({dim, ffn_dim}, rng, std::sqrt(2.0 / (dim + ffn_dim)));
    p.b1 = Tensor::zeros({ffn_dim});
    p.w2 = Tensor::randn({ffn_dim, dim}, rng, std::sqrt(2.0 / (dim + ffn_dim)));
    p.b2 = Tensor::zeros({dim});
    return p;
}

Tensor attention_block(const Tensor& x, const AttentionParams& p, int blocks) {
    require_2d(x, "attention_block");
    const int d = x.cols();
    if (p.heads < 1 || d % p.heads != 0) {
        throw ConfigError("attention_block: feature dim " + std::to_string(d) +
                          " is not divisible by " + std::to_string(p.heads) + " heads");
    }
    const int dh = d / p.heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> ctx;
    ctx.reserve(static_cast<size_t>(p.heads));
    for (int h = 0; h < p.heads; ++h) {
        Tensor q = matmul(x, p.wq[static_cast<size_t>(h)]);
        Tensor k = matmul(x, p.wk[static_cast<size_t>(h)]);
        Tensor v = matmul(x, p.wv[static_cast<size_t>(h)]);
        Tensor attn = softmax_rows(scale(block_scores(q, k, blocks), inv_sqrt));
        ctx.push_back(block_mix(attn, v, blocks));
    }
    Tensor mixed = p.heads == 1 ? ctx[0] : concat_cols(ctx);
    Tensor attn_out = add_bias(matmul(mixed, p.wo), p.bo);
    Tensor ffn = dense(relu(dense(attn_out, p.w1, p.b1)), p.w2, p.b2);
    return add(ffn, attn_out);
}

}  // namespace mce
