#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mce/model.hpp"
#include "mce/tensor.hpp"

namespace mce {

enum class OptimizerKind { kAdam, kSgd };

OptimizerKind optimizer_kind_from(const std::string& name);
std::string to_string(OptimizerKind kind);

/// Updates every registered parameter each step from the tape's gradients
/// (zero when a parameter did not participate). Parameters are replaced by
/// fresh tensors; optimizer state is keyed by parameter name.
class Optimizer {
  public:
    virtual ~Optimizer() = default;
    virtual void step(ParamRefs& params, const Tape& tape) = 0;
};

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double learning_rate);

}  // namespace mce
