#pragma once

#include <cstdint>
#include <vector>

#include "amid/tensor.hpp"

namespace amid::diff {

// Adam with bias correction over a fixed parameter list. Frozen parameters
// keep both their values and their moment buffers untouched.
class AdamOptimizer {
  public:
    explicit AdamOptimizer(std::vector<Parameter*> params, double lr = 1e-3,
                           double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    // Applies one update from the accumulated gradients. Throws NumericError
    // naming the parameter when a gradient is non-finite.
    void step();
    void zero_grad();

    double learning_rate() const { return lr_; }
    const std::vector<Parameter*>& parameters() const { return params_; }

    // Moment buffers and step counter, for run-state serialization.
    struct Slot {
        std::vector<double> m, v;
    };
    const std::vector<Slot>& slots() const { return slots_; }
    std::int64_t step_count() const { return step_count_; }
    void restore(std::vector<Slot> slots, std::int64_t step_count);

  private:
    std::vector<Parameter*> params_;
    std::vector<Slot> slots_;
    double lr_, beta1_, beta2_, eps_;
    std::int64_t step_count_ = 0;
};

}  // namespace amid::diff
