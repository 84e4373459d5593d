#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "amid/errors.hpp"
#include "amid/pairing.hpp"
#include "amid/rng.hpp"
#include "amid/schedule.hpp"
#include "amid/tensor.hpp"
#include "doctest.h"

using namespace amid;
using diff::Tensor;
using schedule::DEstimator;
using schedule::LambdaState;

namespace {

// Feeds fixed epoch averages directly into the accumulators.
void inject(LambdaState& state, double avg1, double avg2) {
    state.self_sum = avg1 * 10.0;
    state.self_count = 10;
    state.cross_sum = avg2 * 10.0;
    state.cross_count = 10;
}

}  // namespace

TEST_CASE("perfect alignment keeps lambda balanced") {
    LambdaState state;
    inject(state, 1.0, 1.0);
    schedule::end_of_epoch_lambda(state, 0.9);
    CHECK(state.logit[0] == 0.0);
    CHECK(state.logit[1] == 0.0);
    CHECK(state.lambda1() == 0.5);
    CHECK(state.lambda2() == 0.5);
    CHECK(state.self_count == 0);  // accumulators reset
    CHECK(state.cross_count == 0);
}

TEST_CASE("worked example: averages (1, 0.5) give softmax(0, 0.05)") {
    LambdaState state;
    inject(state, 1.0, 0.5);
    schedule::end_of_epoch_lambda(state, 0.9);
    CHECK(state.logit[0] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(state.logit[1] == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(state.lambda1() == doctest::Approx(0.48750).epsilon(1e-4));
    CHECK(state.lambda2() == doctest::Approx(0.51250).epsilon(1e-4));
    CHECK(state.lambda1() + state.lambda2() == 1.0);
}

TEST_CASE("worse same-class alignment never decreases lambda2") {
    double prev_lambda2 = -1.0;
    for (double avg2 = 1.0; avg2 >= -1.0; avg2 -= 0.125) {
        LambdaState state;
        inject(state, 0.8, avg2);
        schedule::end_of_epoch_lambda(state, 0.9);
        CHECK(state.lambda2() >= prev_lambda2);
        prev_lambda2 = state.lambda2();
    }
}

TEST_CASE("lambda sums to one exactly for arbitrary logits") {
    Rng rng(3);
    for (int t = 0; t < 100; ++t) {
        LambdaState state;
        state.logit = {rng.normal(), rng.normal()};
        inject(state, 2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0);
        schedule::end_of_epoch_lambda(state, 0.9);
        CHECK(state.lambda1() + state.lambda2() == 1.0);
        CHECK(state.lambda1() > 0.0);
        CHECK(state.lambda2() > 0.0);
    }
}

TEST_CASE("constant averages converge geometrically to (1-a1, 1-a2)") {
    LambdaState state;
    const double a1 = 0.9, a2 = 0.35, beta = 0.9;
    double prev_err = 2.0;
    for (int epoch = 0; epoch < 80; ++epoch) {
        inject(state, a1, a2);
        schedule::end_of_epoch_lambda(state, beta);
        const double err = std::max(std::fabs(state.logit[0] - (1.0 - a1)),
                                    std::fabs(state.logit[1] - (1.0 - a2)));
        CHECK(err <= prev_err + 1e-15);
        prev_err = err;
    }
    CHECK(prev_err < 1e-3);
}

TEST_CASE("empty cross accumulator defaults to the self average") {
    LambdaState a, b;
    inject(a, 0.7, 0.7);
    b.self_sum = 0.7 * 4.0;
    b.self_count = 4;  // cross accumulator untouched
    schedule::end_of_epoch_lambda(a, 0.9);
    schedule::end_of_epoch_lambda(b, 0.9);
    CHECK(a.logit[0] == b.logit[0]);
    CHECK(a.logit[1] == b.logit[1]);
}

TEST_CASE("an epoch with no accumulated batches is a usage error") {
    LambdaState state;
    CHECK_THROWS_AS(schedule::end_of_epoch_lambda(state, 0.9), UsageError);
}

TEST_CASE("similarity accumulators") {
    const std::vector<int> labels = {0, 0, 1};
    const auto index = pairing::build_pair_index(labels);

    SUBCASE("collapsed classes average to one in both accumulators") {
        // M == S and the same-class rows coincide, so every tracked cosine is 1.
        const Tensor m = Tensor::constant({3, 2}, {1, 0, 1, 0, 1, 1});
        LambdaState state;
        schedule::accumulate_similarities(m, m, index, state);
        CHECK(state.self_count == 3);
        CHECK(state.self_sum / 3.0 == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(state.cross_count == 2);  // (0,1) and (1,0)
        CHECK(state.cross_sum / 2.0 == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("all-distinct labels leave the cross accumulator untouched") {
        const std::vector<int> distinct = {0, 1, 2};
        const auto idx = pairing::build_pair_index(distinct);
        const Tensor m = Tensor::constant({3, 2}, {1, 0, 0, 1, 1, 1});
        LambdaState state;
        schedule::accumulate_similarities(m, m, idx, state);
        CHECK(state.cross_count == 0);
        CHECK(state.cross_sum == 0.0);
    }
    SUBCASE("orthogonal teacher and student rows average to zero") {
        const Tensor m = Tensor::constant({3, 2}, {1, 0, 1, 0, 1, 0});
        const Tensor s = Tensor::constant({3, 2}, {0, 1, 0, 1, 0, 1});
        LambdaState state;
        schedule::accumulate_similarities(m, s, index, state);
        CHECK(state.self_sum == doctest::Approx(0.0));
    }
}

TEST_CASE("d estimator") {
    SUBCASE("constant stream converges within 100 batches") {
        DEstimator est;
        for (int i = 0; i < 100; ++i) est.update(4);
        CHECK(std::fabs(est.est - 4.0) < 0.01);
    }
    SUBCASE("all-distinct labels keep the floor") {
        DEstimator est;
        for (int i = 0; i < 50; ++i) est.update(0);
        CHECK(est.est == 1.0);
    }
    SUBCASE("never drops below one") {
        DEstimator est;
        est.est = 7.0;
        for (int i = 0; i < 500; ++i) est.update(0);
        CHECK(est.est >= 1.0);
    }
}

TEST_CASE("static multi-count expectation") {
    SUBCASE("singleton classes floor at one") {
        std::vector<int> labels(20);
        for (int i = 0; i < 20; ++i) labels[i] = i;  // all distinct
        CHECK(schedule::expected_multi_count(labels, 8) == 1.0);
    }
    SUBCASE("one shared class makes the whole batch multi") {
        const std::vector<int> labels(40, 3);
        CHECK(schedule::expected_multi_count(labels, 8) == doctest::Approx(8.0).epsilon(1e-9));
    }
    SUBCASE("agrees with simulation on a mixed histogram") {
        std::vector<int> labels;
        for (int c = 0; c < 10; ++c)
            for (int i = 0; i < 12; ++i) labels.push_back(c);
        const double expect = schedule::expected_multi_count(labels, 16);
        Rng rng(42);
        double sim = 0.0;
        const int trials = 4000;
        std::vector<std::size_t> order(labels.size());
        for (int t = 0; t < trials; ++t) {
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[rng.index(i)]);
            std::vector<int> batch;
            for (int i = 0; i < 16; ++i) batch.push_back(labels[order[i]]);
            sim += static_cast<double>(
                pairing::build_pair_index(batch).multi_count());
        }
        sim /= trials;
        CHECK(expect == doctest::Approx(sim).epsilon(0.05));
    }
}
