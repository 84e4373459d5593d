#pragma once

#include <array>
#include <cstddef>
#include <span>

#include "amid/pairing.hpp"
#include "amid/tensor.hpp"

namespace amid::schedule {

// Moving-average discriminator-weight state. logit is the pre-softmax
// 2-vector (lambda-tilde); weight is its softmax, with weight[0]+weight[1]
// equal to 1 exactly. The epoch accumulators collect same-instance cosines
// (for D1) and same-class cross-sample cosines (for D2).
struct LambdaState {
    std::array<double, 2> logit{0.0, 0.0};
    std::array<double, 2> weight{0.5, 0.5};
    double self_sum = 0.0;
    std::size_t self_count = 0;
    double cross_sum = 0.0;
    std::size_t cross_count = 0;

    double lambda1() const { return weight[0]; }
    double lambda2() const { return weight[1]; }
};

// Adds cos(M_i, S_i) for every anchor to the first accumulator and
// cos(M_v, S_u) for every v in the multi-set and every same-class u != v to
// the second. Plain arithmetic on values; nothing is differentiated.
void accumulate_similarities(const diff::Tensor& teacher, const diff::Tensor& student,
                             const pairing::PairIndex& index, LambdaState& state);

// End-of-epoch update:
//   logit <- beta*logit + (1-beta)*(1-avg1, 1-avg2);  weight <- softmax(logit)
// When the cross accumulator is empty its average defaults to the self
// average. Resets both accumulators.
void end_of_epoch_lambda(LambdaState& state, double beta);

// Exponential running mean of the multi-set size w, floored at 1.
struct DEstimator {
    double est = 1.0;
    void update(std::size_t w) {
        est = 0.9 * est + 0.1 * static_cast<double>(w);
        if (est < 1.0) est = 1.0;
    }
};

// Static alternative to the running estimate: expected multi-set size of a
// uniformly drawn batch, computed from the class histogram of the dataset.
double expected_multi_count(std::span<const int> labels, std::size_t batch_size);

struct WarmupGate {
    std::size_t t_start = 0;
    bool warm(std::size_t epoch) const { return epoch < t_start; }
};

}  // namespace amid::schedule
