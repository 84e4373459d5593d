#include "amid/schedule.hpp"

#include <cmath>
#include <map>

#include "amid/errors.hpp"

namespace amid::schedule {

namespace {

double row_cosine(const diff::Tensor& a, const diff::Tensor& b, std::size_t i, std::size_t j) {
    const std::size_t d = a.cols();
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t p = 0; p < d; ++p) {
        const double x = a.at(i, p);
        const double y = b.at(j, p);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (na == 0.0 || nb == 0.0)
        throw NumericError("similarity accumulator: zero-norm representation row");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

void accumulate_similarities(const diff::Tensor& teacher, const diff::Tensor& student,
                             const pairing::PairIndex& index, LambdaState& state) {
    const std::size_t b = index.batch_size();
    for (std::size_t i = 0; i < b; ++i) {
        state.self_sum += row_cosine(teacher, student, i, i);
        ++state.self_count;
    }
    for (std::size_t v : index.multi_set) {
        const auto& pos = index.anchors[v].positives;
        for (std::size_t k = 1; k < pos.size(); ++k) {
            state.cross_sum += row_cosine(teacher, student, v, pos[k]);
            ++state.cross_count;
        }
    }
}

void end_of_epoch_lambda(LambdaState& state, double beta) {
    if (state.self_count == 0)
        throw UsageError("end_of_epoch_lambda: no accumulated similarities this epoch");
    if (!(beta > 0.0 && beta < 1.0))
        throw ConfigError("end_of_epoch_lambda: beta must lie in (0,1)");

    const double avg1 = state.self_sum / static_cast<double>(state.self_count);
    const double avg2 =
        state.cross_count > 0 ? state.cross_sum / static_cast<double>(state.cross_count) : avg1;

    state.logit[0] = beta * state.logit[0] + (1.0 - beta) * (1.0 - avg1);
    state.logit[1] = beta * state.logit[1] + (1.0 - beta) * (1.0 - avg2);

    // softmax of a 2-vector via the logistic of the difference; the
    // complement keeps lambda1 + lambda2 == 1 exactly.
    state.weight[0] = 1.0 / (1.0 + std::exp(state.logit[1] - state.logit[0]));
    state.weight[1] = 1.0 - state.weight[0];

    state.self_sum = 0.0;
    state.self_count = 0;
    state.cross_sum = 0.0;
    state.cross_count = 0;
}

double expected_multi_count(std::span<const int> labels, std::size_t batch_size) {
    const double n = static_cast<double>(labels.size());
    const double b = static_cast<double>(batch_size);
    if (labels.empty() || b < 2.0 || b > n) return 1.0;

    std::map<int, std::size_t> counts;
    for (int y : labels) ++counts[y];

    // P(another same-class sample lands in the batch) via log-gamma ratios:
    // 1 - C(n-c, b-1) / C(n-1, b-1) for a sample of a class with c members.
    auto log_choose = [](double m, double k) {
        return std::lgamma(m + 1.0) - std::lgamma(k + 1.0) - std::lgamma(m - k + 1.0);
    };
    double expected = 0.0;
    for (const auto& [label, c] : counts) {
        const double cd = static_cast<double>(c);
        double p_has_peer = 1.0;
        if (n - cd >= b - 1.0) {
            p_has_peer = 1.0 - std::exp(log_choose(n - cd, b - 1.0) - log_choose(n - 1.0, b - 1.0));
        }
        expected += cd / n * p_has_peer;
    }
    return std::max(1.0, expected * b);
}

}  // namespace amid::schedule
