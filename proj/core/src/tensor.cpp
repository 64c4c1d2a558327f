#include "mce/tensor.hpp"

#include <cmath>
#include <sstream>

namespace mce {

int shape_size(const Shape& shape) {
    int n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
    if (shape_size(shape) != static_cast<int>(values.size())) {
        throw ShapeError("tensor shape " + shape_str(shape) + " does not match value count " +
                         std::to_string(values.size()));
    }
    for (double v : values) {
        if (!std::isfinite(v)) throw NonFiniteError("tensor holds a non-finite value");
    }
    p_ = std::make_shared<detail::Payload>(detail::Payload{std::move(shape), std::move(values)});
}

Tensor Tensor::zeros(Shape shape) {
    int n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(Shape shape, double v) {
    int n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), v));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double sigma) {
    int n = shape_size(shape);
    std::vector<double> v(static_cast<size_t>(n));
    for (double& x : v) x = sigma * rng.normal();
    return Tensor(std::move(shape), std::move(v));
}

int Tensor::rows() const { return ndim() >= 1 ? dim(0) : 1; }

int Tensor::cols() const {
    if (ndim() == 1) return 1;
    if (ndim() == 2) return dim(1);
    throw ShapeError("cols() requires a 1-D or 2-D tensor, got " + shape_str(shape()));
}

double Tensor::value() const {
    if (size() != 1) throw ShapeError("value() requires a scalar, got " + shape_str(shape()));
    return values()[0];
}

double Tensor::at(int r, int c) const {
    if (ndim() != 2) throw ShapeError("at(r,c) requires a 2-D tensor, got " + shape_str(shape()));
    if (r < 0 || r >= dim(0) || c < 0 || c >= dim(1)) {
        throw IndexError("tensor index (" + std::to_string(r) + "," + std::to_string(c) +
                         ") out of range for " + shape_str(shape()));
    }
    return values()[static_cast<size_t>(r) * static_cast<size_t>(dim(1)) + static_cast<size_t>(c)];
}

thread_local Tape* Tape::active_ = nullptr;

Tape* Tape::active() { return active_; }

int Tape::node_of(const Tensor& t) {
    if (!t.defined()) throw ContractError("undefined tensor used in a recorded operation");
    auto it = index_.find(t.id());
    if (it != index_.end()) return it->second;
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{t.payload(), {}, nullptr});
    index_.emplace(t.id(), id);
    return id;
}

void Tape::record(const Tensor& out, std::vector<int> inputs, BackwardFn fn) {
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{out.payload(), std::move(inputs), std::move(fn)});
    index_.emplace(out.id(), id);
}

std::vector<double>& Tape::grad_buffer(int node) {
    auto& g = grads_[static_cast<size_t>(node)];
    if (g.empty()) g.assign(nodes_[static_cast<size_t>(node)].pin->values.size(), 0.0);
    return g;
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) throw ContractError("backward() requires a scalar loss");
    auto it = index_.find(loss.id());
    if (it == index_.end()) throw ContractError("backward(): loss was not recorded on this tape");
    grads_.assign(nodes_.size(), {});
    grads_[static_cast<size_t>(it->second)] = {1.0};
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
        auto& node = nodes_[static_cast<size_t>(i)];
        auto& g = grads_[static_cast<size_t>(i)];
        if (!node.backward || g.empty()) continue;
        node.backward(*this, g, node.inputs);
    }
}

bool Tape::touched(const Tensor& t) const { return index_.count(t.id()) > 0; }

std::vector<double> Tape::grad(const Tensor& t) const {
    auto it = index_.find(t.id());
    if (it == index_.end() || grads_.empty()) {
        return std::vector<double>(static_cast<size_t>(t.size()), 0.0);
    }
    const auto& g = grads_[static_cast<size_t>(it->second)];
    if (g.empty()) return std::vector<double>(static_cast<size_t>(t.size()), 0.0);
    return g;
}

}  // namespace mce
