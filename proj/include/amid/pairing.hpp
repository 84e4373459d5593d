#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "amid/rng.hpp"

namespace amid::pairing {

// Per-anchor positive/negative index structure over one labelled batch.
// For anchor i, positives[i][0] is always i itself (the same-sample pair);
// the remaining positives are the other same-class indices in ascending
// order, and negatives are all different-class indices in ascending order.
// multi_set collects every index whose class has at least two samples in
// the batch.
struct PairIndex {
    struct Anchor {
        std::vector<std::size_t> positives;  // eta, positives.size() == k_i
        std::vector<std::size_t> negatives;  // xi,  negatives.size() == N_i
    };
    std::vector<Anchor> anchors;
    std::vector<std::size_t> multi_set;

    std::size_t batch_size() const { return anchors.size(); }
    std::size_t multi_count() const { return multi_set.size(); }  // w
    std::size_t positives_count(std::size_t i) const { return anchors[i].positives.size(); }
    std::size_t negatives_count(std::size_t i) const { return anchors[i].negatives.size(); }

    // Per-anchor class priors q(C=1), q(C=0).
    double q_same(std::size_t i) const {
        return static_cast<double>(positives_count(i)) / static_cast<double>(batch_size());
    }
    double q_diff(std::size_t i) const { return 1.0 - q_same(i); }
};

// Builds the structure from batch labels. Requires batch size >= 2.
PairIndex build_pair_index(std::span<const int> labels);

// For every index v in the multi-set, draws one same-class partner != v,
// uniformly. Resampled per call (per batch). Empty when the multi-set is.
std::vector<std::pair<std::size_t, std::size_t>> multi_sample_pairs(const PairIndex& index,
                                                                    Rng& rng);

// Pair-index view that keeps only the same-sample positive (eta = {i}) while
// leaving the negatives untouched; the contrastive ablation hook.
PairIndex self_pairs_only(const PairIndex& index);

}  // namespace amid::pairing
