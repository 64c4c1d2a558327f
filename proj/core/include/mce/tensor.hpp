#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mce/errors.hpp"
#include "mce/rng.hpp"

namespace mce {

using Shape = std::vector<int>;

int shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Payload {
    Shape shape;
    std::vector<double> values;
};
}  // namespace detail

/// Dense double-precision tensor. Values are immutable once constructed;
/// differentiation bookkeeping lives on the Tape and is keyed by payload
/// identity, so tensors stay plain shareable values.
class Tensor {
  public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor scalar(double v);
    static Tensor randn(Shape shape, Rng& rng, double sigma = 1.0);

    bool defined() const { return static_cast<bool>(p_); }
    const Shape& shape() const { return p_->shape; }
    const std::vector<double>& values() const { return p_->values; }
    int size() const { return static_cast<int>(p_->values.size()); }
    int ndim() const { return static_cast<int>(p_->shape.size()); }
    int dim(int i) const { return p_->shape[static_cast<size_t>(i)]; }
    int rows() const;
    int cols() const;

    /// Scalar accessor; requires size() == 1.
    double value() const;
    /// 2-D element accessor.
    double at(int r, int c) const;

    /// Identity used to associate a tensor with tape nodes.
    const void* id() const { return p_.get(); }
    std::shared_ptr<const detail::Payload> payload() const { return p_; }

  private:
    std::shared_ptr<const detail::Payload> p_;
};

/// Reverse-mode tape. Operations record themselves on the active tape (see
/// TapeScope); nodes are appended in execution order, so sweeping the node
/// list backwards is a valid topological traversal. One tape per training
/// step; tapes are single-writer and must not be shared across steps.
class Tape {
  public:
    using BackwardFn =
        std::function<void(Tape&, const std::vector<double>& gout, const std::vector<int>& inputs)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    /// Runs one backward pass from a scalar loss, populating gradients for
    /// every tensor reachable from it.
    void backward(const Tensor& loss);

    /// Whether the tensor participated in this tape.
    bool touched(const Tensor& t) const;

    /// Gradient of the last backward() w.r.t. t; zeros when untouched.
    std::vector<double> grad(const Tensor& t) const;

    size_t node_count() const { return nodes_.size(); }

    // --- recording interface used by ops ---
    int node_of(const Tensor& t);  // registers a leaf on first sight
    void record(const Tensor& out, std::vector<int> inputs, BackwardFn fn);
    std::vector<double>& grad_buffer(int node);

  private:
    struct Node {
        std::shared_ptr<const detail::Payload> pin;  // keeps ids stable
        std::vector<int> inputs;
        BackwardFn backward;  // empty for leaves
    };
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
    std::unordered_map<const void*, int> index_;

    static thread_local Tape* active_;
    friend class TapeScope;
    friend class TapeSuspend;
};

/// Makes a tape the active recording target for the current scope.
class TapeScope {
  public:
    explicit TapeScope(Tape& t) : prev_(Tape::active_) { Tape::active_ = &t; }
    ~TapeScope() { Tape::active_ = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape* prev_;
};

/// Disables recording for the current scope (inference passes).
class TapeSuspend {
  public:
    TapeSuspend() : prev_(Tape::active_) { Tape::active_ = nullptr; }
    ~TapeSuspend() { Tape::active_ = prev_; }
    TapeSuspend(const TapeSuspend&) = delete;
    TapeSuspend& operator=(const TapeSuspend&) = delete;

  private:
    Tape* prev_;
};

}  // namespace mce
