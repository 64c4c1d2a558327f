#include "mce/optim.hpp"

#include <cmath>

#include "mce/errors.hpp"

namespace mce {

OptimizerKind optimizer_kind_from(const std::string& name) {
    if (name == "adam") return OptimizerKind::kAdam;
    if (name == "sgd") return OptimizerKind::kSgd;
    throw ConfigError("train.optimizer: unknown kind '" + name + "' (expected adam or sgd)");
}

std::string to_string(OptimizerKind kind) {
    return kind == OptimizerKind::kAdam ? "adam" : "sgd";
}

namespace {

class Sgd final : public Optimizer {
  public:
    explicit Sgd(double lr) : lr_(lr) {}

    void step(ParamRefs& params, const Tape& tape) override {
        for (auto& [name, p] : params) {
            auto g = tape.grad(*p);
            std::vector<double> v(p->values());
            for (size_t i = 0; i < v.size(); ++i) v[i] -= lr_ * g[i];
            *p = Tensor(p->shape(), std::move(v));
        }
    }

  private:
    double lr_;
};

class Adam final : public Optimizer {
  public:
    explicit Adam(double lr) : lr_(lr) {}

    void step(ParamRefs& params, const Tape& tape) override {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, t_);
        const double c2 = 1.0 - std::pow(beta2_, t_);
        for (auto& [name, p] : params) {
            auto g = tape.grad(*p);
            auto& st = state_[name];
            if (st.m.empty()) {
                st.m.assign(g.size(), 0.0);
                st.v.assign(g.size(), 0.0);
            }
            std::vector<double> v(p->values());
            for (size_t i = 0; i < v.size(); ++i) {
                st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * g[i];
                st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * g[i] * g[i];
                v[i] -= lr_ * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + eps_);
            }
            *p = Tensor(p->shape(), std::move(v));
        }
    }

  private:
    struct State {
        std::vector<double> m, v;
    };
    double lr_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    long t_ = 0;
    std::unordered_map<std::string, State> state_;
};

}  // namespace

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double learning_rate) {
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate: must be > 0");
    if (kind == OptimizerKind::kAdam) return std::make_unique<Adam>(learning_rate);
    return std::make_unique<Sgd>(learning_rate);
}

}  // namespace mce
