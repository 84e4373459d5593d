#include "amid/pairing.hpp"

#include <map>

#include "amid/errors.hpp"

namespace amid::pairing {

PairIndex build_pair_index(std::span<const int> labels) {
    const std::size_t b = labels.size();
    if (b < 2) throw ConfigError("build_pair_index: batch size must be at least 2");

    std::map<int, std::size_t> class_counts;
    for (int y : labels) ++class_counts[y];

    PairIndex index;
    index.anchors.resize(b);
    for (std::size_t i = 0; i < b; ++i) {
        auto& anchor = index.anchors[i];
        anchor.positives.push_back(i);
        for (std::size_t j = 0; j < b; ++j) {
            if (j == i) continue;
            if (labels[j] == labels[i]) {
                anchor.positives.push_back(j);
            } else {
                anchor.negatives.push_back(j);
            }
        }
    }
    for (std::size_t i = 0; i < b; ++i) {
        if (class_counts[labels[i]] >= 2) index.multi_set.push_back(i);
    }
    return index;
}

std::vector<std::pair<std::size_t, std::size_t>> multi_sample_pairs(const PairIndex& index,
                                                                    Rng& rng) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    pairs.reserve(index.multi_set.size());
    for (std::size_t v : index.multi_set) {
        const auto& pos = index.anchors[v].positives;
        // pos[0] == v; the partner comes from the remaining same-class entries.
        const std::size_t pick = 1 + rng.index(pos.size() - 1);
        pairs.emplace_back(v, pos[pick]);
    }
    return pairs;
}

PairIndex self_pairs_only(const PairIndex& index) {
    PairIndex out = index;
    for (auto& anchor : out.anchors) anchor.positives.resize(1);
    return out;
}

}  // namespace amid::pairing
