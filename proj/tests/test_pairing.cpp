#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <map>
#include <set>
#include <vector>

#include "amid/errors.hpp"
#include "amid/pairing.hpp"
#include "amid/rng.hpp"
#include "doctest.h"

using namespace amid;
using namespace amid::pairing;

namespace {

std::vector<int> random_labels(Rng& rng, std::size_t b, int classes) {
    std::vector<int> labels(b);
    for (int& y : labels) y = static_cast<int>(rng.index(classes));
    return labels;
}

}  // namespace

TEST_CASE("worked example: labels 0,0,1,2") {
    const std::vector<int> labels = {0, 0, 1, 2};
    const PairIndex index = build_pair_index(labels);
    CHECK(index.anchors[0].positives == std::vector<std::size_t>{0, 1});
    CHECK(index.anchors[0].negatives == std::vector<std::size_t>{2, 3});
    CHECK(index.positives_count(0) == 2);
    CHECK(index.negatives_count(0) == 2);
    CHECK(index.multi_set == std::vector<std::size_t>{0, 1});
    CHECK(index.multi_count() == 2);
}

TEST_CASE("all labels distinct") {
    const std::vector<int> labels = {3, 1, 4, 2};
    const PairIndex index = build_pair_index(labels);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        CHECK(index.anchors[i].positives == std::vector<std::size_t>{i});
        CHECK(index.negatives_count(i) == labels.size() - 1);
    }
    CHECK(index.multi_count() == 0);
}

TEST_CASE("all labels equal (degenerate batch)") {
    const std::vector<int> labels = {7, 7, 7, 7, 7};
    const PairIndex index = build_pair_index(labels);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        CHECK(index.negatives_count(i) == 0);
        CHECK(index.positives_count(i) == labels.size());
    }
    CHECK(index.multi_count() == labels.size());
}

TEST_CASE("tiny batches are rejected") {
    const std::vector<int> one = {0};
    CHECK_THROWS_AS((void)build_pair_index(one), ConfigError);
    CHECK_THROWS_AS((void)build_pair_index(std::vector<int>{}), ConfigError);
}

TEST_CASE("partition, self-membership and prior properties hold on random batches") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t b = 2 + rng.index(14);
        const auto labels = random_labels(rng, b, 4);
        const PairIndex index = build_pair_index(labels);
        std::size_t expected_w = 0;
        std::map<int, std::size_t> counts;
        for (int y : labels) ++counts[y];
        for (const auto& [y, c] : counts)
            if (c >= 2) expected_w += c;
        CHECK(index.multi_count() == expected_w);

        for (std::size_t i = 0; i < b; ++i) {
            CHECK(index.anchors[i].positives[0] == i);
            CHECK(index.positives_count(i) + index.negatives_count(i) == b);
            CHECK(index.q_same(i) + index.q_diff(i) == 1.0);

            std::set<std::size_t> all;
            for (auto j : index.anchors[i].positives) all.insert(j);
            for (auto j : index.anchors[i].negatives) all.insert(j);
            CHECK(all.size() == b);  // disjoint union covering the batch
        }
        // Symmetry: j in eta_i \ {i}  <=>  i in eta_j \ {j}
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j : index.anchors[i].positives) {
                if (j == i) continue;
                const auto& other = index.anchors[j].positives;
                CHECK(std::find(other.begin(), other.end(), i) != other.end());
            }
        }
    }
}

TEST_CASE("permuting the batch yields the identical logical structure") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t b = 3 + rng.index(10);
        const auto labels = random_labels(rng, b, 3);

        std::vector<std::size_t> perm(b);
        for (std::size_t i = 0; i < b; ++i) perm[i] = i;
        for (std::size_t i = b; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);

        std::vector<int> permuted(b);
        for (std::size_t i = 0; i < b; ++i) permuted[perm[i]] = labels[i];

        const PairIndex a = build_pair_index(labels);
        const PairIndex c = build_pair_index(permuted);
        for (std::size_t i = 0; i < b; ++i) {
            std::set<std::size_t> mapped_pos, mapped_neg;
            for (auto j : a.anchors[i].positives) mapped_pos.insert(perm[j]);
            for (auto j : a.anchors[i].negatives) mapped_neg.insert(perm[j]);
            std::set<std::size_t> got_pos(c.anchors[perm[i]].positives.begin(),
                                          c.anchors[perm[i]].positives.end());
            std::set<std::size_t> got_neg(c.anchors[perm[i]].negatives.begin(),
                                          c.anchors[perm[i]].negatives.end());
            CHECK(mapped_pos == got_pos);
            CHECK(mapped_neg == got_neg);
        }
    }
}

TEST_CASE("multi_sample_pairs picks the only available partner") {
    const std::vector<int> labels = {0, 0, 1};
    const PairIndex index = build_pair_index(labels);
    Rng rng(1);
    const auto pairs = multi_sample_pairs(index, rng);
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0] == std::pair<std::size_t, std::size_t>{0, 1});
    CHECK(pairs[1] == std::pair<std::size_t, std::size_t>{1, 0});
}

TEST_CASE("multi_sample_pairs is empty for distinct labels") {
    const std::vector<int> labels = {0, 1, 2, 3};
    const PairIndex index = build_pair_index(labels);
    Rng rng(1);
    CHECK(multi_sample_pairs(index, rng).empty());
}

TEST_CASE("partner choice is uniform over same-class alternatives") {
    const std::vector<int> labels = {0, 0, 0};
    const PairIndex index = build_pair_index(labels);
    Rng rng(123);
    int picked_first = 0;
    const int draws = 10000;
    for (int t = 0; t < draws; ++t) {
        const auto pairs = multi_sample_pairs(index, rng);
        if (pairs[0].second == 1) ++picked_first;
    }
    const double freq = static_cast<double>(picked_first) / draws;
    CHECK(freq > 0.45);
    CHECK(freq < 0.55);
}

TEST_CASE("self_pairs_only keeps only the same-sample positive") {
    const std::vector<int> labels = {0, 0, 1, 1};
    const PairIndex nce = self_pairs_only(build_pair_index(labels));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        CHECK(nce.anchors[i].positives == std::vector<std::size_t>{i});
        CHECK(nce.negatives_count(i) == 2);  // negatives untouched
    }
}
