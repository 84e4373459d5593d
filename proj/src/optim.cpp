#include "amid/optim.hpp"

#include <cmath>

#include "amid/errors.hpp"

namespace amid::diff {

AdamOptimizer::AdamOptimizer(std::vector<Parameter*> params, double lr, double beta1,
                             double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    slots_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        slots_[i].m.assign(params_[i]->size(), 0.0);
        slots_[i].v.assign(params_[i]->size(), 0.0);
    }
}

void AdamOptimizer::step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Parameter* p = params_[k];
        if (!p->trainable()) continue;
        const auto g = p->grad();
        for (double gv : g) {
            if (!std::isfinite(gv)) {
                throw NumericError("adam: non-finite gradient on parameter '" + p->name() + "'");
            }
        }
        auto vals = p->values_mut();
        auto& m = slots_[k].m;
        auto& v = slots_[k].v;
        for (std::size_t i = 0; i < vals.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            vals[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
        }
    }
}

void AdamOptimizer::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

void AdamOptimizer::restore(std::vector<Slot> slots, std::int64_t step_count) {
    if (slots.size() != params_.size()) throw UsageError("adam: slot count mismatch on restore");
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i].m.size() != params_[i]->size() || slots[i].v.size() != params_[i]->size())
            throw UsageError("adam: slot shape mismatch on restore");
    }
    slots_ = std::move(slots);
    step_count_ = step_count;
}

}  // namespace amid::diff
