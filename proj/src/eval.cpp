#include "amid/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "amid/errors.hpp"
#include "amid/losses.hpp"
#include "amid/pairing.hpp"

namespace amid::eval {

namespace {

std::size_t argmax_row(const diff::Tensor& logits, std::size_t row) {
    const std::size_t c = logits.cols();
    std::size_t best = 0;
    double best_v = logits.at(row, 0);
    for (std::size_t j = 1; j < c; ++j) {
        const double v = logits.at(row, j);
        if (v > best_v) {  // strict: ties keep the lowest index
            best_v = v;
            best = j;
        }
    }
    return best;
}

}  // namespace

double top1(const diff::Tensor& logits, std::span<const int> labels) {
    if (logits.rows() != labels.size()) throw UsageError("top1: row count mismatch");
    if (labels.empty()) throw UsageError("top1: empty batch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (argmax_row(logits, i) == static_cast<std::size_t>(labels[i])) ++hits;
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::pair<double, double> wa_ua(const diff::Tensor& logits, std::span<const int> labels) {
    if (logits.rows() != labels.size()) throw UsageError("wa_ua: row count mismatch");
    if (labels.empty()) throw UsageError("wa_ua: empty batch");
    int max_label = 0;
    for (int y : labels) max_label = std::max(max_label, y);
    const std::size_t classes = static_cast<std::size_t>(max_label) + 1;
    std::vector<std::size_t> total(classes, 0), correct(classes, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto y = static_cast<std::size_t>(labels[i]);
        ++total[y];
        if (argmax_row(logits, i) == y) ++correct[y];
    }
    double wa_hits = 0.0, recall_sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
        if (total[c] == 0)
            throw DataError("wa_ua: class " + std::to_string(c) + " has no samples");
        wa_hits += static_cast<double>(correct[c]);
        recall_sum += static_cast<double>(correct[c]) / static_cast<double>(total[c]);
    }
    return {wa_hits / static_cast<double>(labels.size()),
            recall_sum / static_cast<double>(classes)};
}

std::map<std::size_t, double> knn_retrieval(const diff::Tensor& query_reps,
                                            std::span<const int> query_labels,
                                            const diff::Tensor& gallery_reps,
                                            std::span<const int> gallery_labels,
                                            std::span<const std::size_t> ks,
                                            bool exclude_self) {
    if (gallery_labels.empty()) throw ConfigError("knn_retrieval: empty gallery");
    const std::size_t usable = gallery_labels.size() - (exclude_self ? 1 : 0);
    std::size_t k_max = 0;
    for (std::size_t k : ks) {
        if (k == 0 || k > usable)
            throw ConfigError("knn_retrieval: K=" + std::to_string(k) +
                              " exceeds usable gallery size " + std::to_string(usable));
        k_max = std::max(k_max, k);
    }

    const diff::Tensor sims = diff::cosine_matrix(query_reps, gallery_reps);
    const std::size_t nq = query_labels.size();
    const std::size_t ng = gallery_labels.size();

    std::map<std::size_t, double> hits;
    for (std::size_t k : ks) hits[k] = 0.0;

    std::vector<std::size_t> order(ng);
    for (std::size_t q = 0; q < nq; ++q) {
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const double sa = sims.at(q, a), sb = sims.at(q, b);
            if (sa != sb) return sa > sb;
            return a < b;  // deterministic tie-break toward the lower index
        });
        std::size_t rank_of_first_match = ng + 1;
        std::size_t seen = 0;
        for (std::size_t idx : order) {
            if (exclude_self && idx == q) continue;
            ++seen;
            if (gallery_labels[idx] == query_labels[q]) {
                rank_of_first_match = seen;
                break;
            }
            if (seen >= k_max) break;
        }
        for (std::size_t k : ks)
            if (rank_of_first_match <= k) hits[k] += 1.0;
    }
    for (auto& [k, v] : hits) v /= static_cast<double>(nq);
    return hits;
}

// ---- discrete joint / MI oracle -------------------------------------------------

DiscreteJoint DiscreteJoint::from_counts(std::size_t m_card, std::size_t s_card,
                                         std::span<const int> counts) {
    if (counts.size() != m_card * s_card)
        throw UsageError("DiscreteJoint: counts size does not match the alphabet");
    long total = 0;
    for (int c : counts) {
        if (c < 0) throw UsageError("DiscreteJoint: negative count");
        total += c;
    }
    if (total == 0) throw UsageError("DiscreteJoint: all counts zero");
    DiscreteJoint j;
    j.m_card = m_card;
    j.s_card = s_card;
    j.p.resize(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i)
        j.p[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
    return j;
}

std::vector<double> DiscreteJoint::marginal_m() const {
    std::vector<double> out(m_card, 0.0);
    for (std::size_t m = 0; m < m_card; ++m)
        for (std::size_t s = 0; s < s_card; ++s) out[m] += prob(m, s);
    return out;
}

std::vector<double> DiscreteJoint::marginal_s() const {
    std::vector<double> out(s_card, 0.0);
    for (std::size_t m = 0; m < m_card; ++m)
        for (std::size_t s = 0; s < s_card; ++s) out[s] += prob(m, s);
    return out;
}

void DiscreteJoint::validate() const {
    if (m_card == 0 || s_card == 0 || p.size() != m_card * s_card)
        throw UsageError("DiscreteJoint: inconsistent table");
    if (m_card > 64 || s_card > 64)
        throw ConfigError("DiscreteJoint: alphabets larger than 64x64 are not supported");
    double sum = 0.0;
    for (double v : p) {
        if (v < 0.0) throw NumericError("DiscreteJoint: negative probability");
        sum += v;
    }
    if (std::fabs(sum - 1.0) > 1e-9) throw NumericError("DiscreteJoint: table does not sum to 1");
}

double mi_oracle(const DiscreteJoint& joint) {
    joint.validate();
    const auto pm = joint.marginal_m();
    const auto ps = joint.marginal_s();
    double mi = 0.0;
    for (std::size_t m = 0; m < joint.m_card; ++m)
        for (std::size_t s = 0; s < joint.s_card; ++s) {
            const double pj = joint.prob(m, s);
            if (pj == 0.0) continue;  // 0 * log 0 := 0
            mi += pj * std::log(pj / (pm[m] * ps[s]));
        }
    return mi;
}

// ---- bound audit toy task --------------------------------------------------------

namespace {

diff::Tensor one_hot_rows(std::span<const int> symbols, std::size_t card) {
    std::vector<double> v(symbols.size() * card, 0.0);
    for (std::size_t i = 0; i < symbols.size(); ++i)
        v[i * card + static_cast<std::size_t>(symbols[i])] = 1.0;
    return diff::Tensor::constant({symbols.size(), card}, std::move(v));
}

}  // namespace

BoundAuditTask::BoundAuditTask(std::size_t m_card, std::size_t s_card, std::vector<int> counts,
                               std::size_t embed_dim, double tau, std::uint64_t seed)
    : joint_(DiscreteJoint::from_counts(m_card, s_card, counts)),
      counts_(std::move(counts)),
      tau_(tau),
      rng_(Rng::derive(seed, 0x70F3)) {
    joint_.validate();
    exact_mi_ = mi_oracle(joint_);
    Rng init(Rng::derive(seed, 0x70F1));
    m_encoder_ = std::make_unique<models::Mlp>(
        "toy_m", std::vector<std::size_t>{m_card, 2 * embed_dim, embed_dim}, init);
    s_encoder_ = std::make_unique<models::Mlp>(
        "toy_s", std::vector<std::size_t>{s_card, 2 * embed_dim, embed_dim}, init);
    std::vector<diff::Parameter*> params = m_encoder_->parameters();
    for (auto* p : s_encoder_->parameters()) params.push_back(p);
    opt_ = std::make_unique<diff::AdamOptimizer>(params, 1e-3);
}

std::pair<diff::Tensor, diff::Tensor> BoundAuditTask::encode(std::span<const int> m_symbols,
                                                             std::span<const int> s_symbols) {
    return {m_encoder_->forward(one_hot_rows(m_symbols, joint_.m_card)),
            s_encoder_->forward(one_hot_rows(s_symbols, joint_.s_card))};
}

void BoundAuditTask::train_epoch(std::size_t batches, std::size_t batch_size) {
    // Cumulative cell distribution for sampling pairs from the joint.
    std::vector<double> cdf(joint_.p.size());
    std::partial_sum(joint_.p.begin(), joint_.p.end(), cdf.begin());

    for (std::size_t b = 0; b < batches; ++b) {
        std::vector<int> m_syms(batch_size), s_syms(batch_size);
        for (std::size_t i = 0; i < batch_size; ++i) {
            const double u = rng_.uniform();
            const std::size_t cell = static_cast<std::size_t>(
                std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
            m_syms[i] = static_cast<int>(cell / joint_.s_card);
            s_syms[i] = static_cast<int>(cell % joint_.s_card);
        }
        const auto index = pairing::build_pair_index(m_syms);
        auto [em, es] = encode(m_syms, s_syms);
        opt_->zero_grad();
        const diff::Tensor loss = losses::mi_contrast(em, es, index, tau_);
        diff::backward(loss);
        opt_->step();
    }
}

BoundAuditResult BoundAuditTask::audit() {
    // Canonical composition batch: counts[m][s] copies of each cell.
    std::vector<int> m_syms, s_syms;
    for (std::size_t m = 0; m < joint_.m_card; ++m)
        for (std::size_t s = 0; s < joint_.s_card; ++s)
            for (int c = 0; c < counts_[m * joint_.s_card + s]; ++c) {
                m_syms.push_back(static_cast<int>(m));
                s_syms.push_back(static_cast<int>(s));
            }
    const auto index = pairing::build_pair_index(m_syms);
    auto [em, es] = encode(m_syms, s_syms);
    const diff::Tensor h = losses::h_matrix(em, es, tau_);
    const std::size_t b = index.batch_size();

    double mean_bound = 0.0;
    double max_bound = -1e300;
    for (std::size_t i = 0; i < b; ++i) {
        const double k_i = static_cast<double>(index.positives_count(i));
        const double n_i = static_cast<double>(index.negatives_count(i));
        double acc = std::log(n_i / k_i);
        for (std::size_t j : index.anchors[i].positives)
            acc += std::log(std::max(diff::kProbEps, h.at(i, j)));
        for (std::size_t l : index.anchors[i].negatives)
            acc += std::log(std::max(diff::kProbEps, 1.0 - h.at(i, l)));
        mean_bound += acc;
        max_bound = std::max(max_bound, acc);
    }
    mean_bound /= static_cast<double>(b);

    BoundAuditResult out;
    out.bound = mean_bound;
    out.bound_max = max_bound;
    out.exact_mi = exact_mi_;
    out.slack = exact_mi_ - mean_bound;
    return out;
}

GapCurve gap_curve(std::span<const double> acc_teacher, std::span<const double> acc_student) {
    if (acc_teacher.size() != acc_student.size())
        throw UsageError("gap_curve: series lengths differ");
    if (acc_teacher.empty()) throw UsageError("gap_curve: empty series");
    GapCurve out;
    out.gaps.resize(acc_teacher.size());
    for (std::size_t i = 0; i < out.gaps.size(); ++i)
        out.gaps[i] = acc_teacher[i] - acc_student[i];
    const std::size_t tail = std::max<std::size_t>(1, out.gaps.size() / 4);
    double sum = 0.0;
    for (std::size_t i = out.gaps.size() - tail; i < out.gaps.size(); ++i) sum += out.gaps[i];
    out.tail_mean = sum / static_cast<double>(tail);
    return out;
}

}  // namespace amid::eval
