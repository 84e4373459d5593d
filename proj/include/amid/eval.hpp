#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "amid/models.hpp"
#include "amid/optim.hpp"
#include "amid/tensor.hpp"

namespace amid::eval {

struct MetricReport {
    double top1 = 0.0;  // student top-1 (same value as acc_student)
    double wa = 0.0;
    double ua = 0.0;
    std::map<std::size_t, double> r_at_k;
    double acc_teacher = 0.0;
    double acc_student = 0.0;
    double gap = 0.0;  // acc_teacher - acc_student
};

// Argmax match rate; ties resolved toward the lowest class index.
double top1(const diff::Tensor& logits, std::span<const int> labels);

// Weighted accuracy (overall) and unweighted accuracy (mean per-class
// recall). Every class present in labels must appear at least once; an
// absent class among 0..max(label) raises DataError.
std::pair<double, double> wa_ua(const diff::Tensor& logits, std::span<const int> labels);

// R@K under cosine similarity: the fraction of queries with at least one
// same-label gallery item among the K nearest neighbours. Neighbour ties
// break toward the lower gallery index. exclude_self skips gallery item i
// for query i (for query set == gallery set).
std::map<std::size_t, double> knn_retrieval(const diff::Tensor& query_reps,
                                            std::span<const int> query_labels,
                                            const diff::Tensor& gallery_reps,
                                            std::span<const int> gallery_labels,
                                            std::span<const std::size_t> ks,
                                            bool exclude_self = false);

// Finite joint probability table with exact-summation MI.
struct DiscreteJoint {
    std::size_t m_card = 0;
    std::size_t s_card = 0;
    std::vector<double> p;  // row-major p(m, s)

    static DiscreteJoint from_counts(std::size_t m_card, std::size_t s_card,
                                     std::span<const int> counts);
    double prob(std::size_t m, std::size_t s) const { return p[m * s_card + s]; }
    std::vector<double> marginal_m() const;
    std::vector<double> marginal_s() const;
    void validate() const;
};

// Exact mutual information in nats, with 0*log 0 := 0.
double mi_oracle(const DiscreteJoint& joint);

struct BoundAuditResult {
    double bound = 0.0;      // mean over anchors of log(N_i/k_i) + I_i(h)
    double bound_max = 0.0;  // worst (largest) per-anchor bound
    double exact_mi = 0.0;
    double slack = 0.0;  // exact_mi - bound
};

// Discrete toy task for validating the MI lower bound: symbols of a known
// joint are embedded as fixed one-hot vectors, two small encoders define the
// similarity model h, and h is trained with the contrastive loss on batches
// sampled from the joint (labels = m symbol). The audit evaluates h on a
// canonical batch whose composition matches the joint exactly, so the
// reported bound is deterministic.
class BoundAuditTask {
  public:
    // counts is a row-major m_card x s_card table of nonnegative integers;
    // the joint is counts / sum(counts), and the canonical audit batch holds
    // exactly counts[m][s] copies of each cell.
    BoundAuditTask(std::size_t m_card, std::size_t s_card, std::vector<int> counts,
                   std::size_t embed_dim, double tau, std::uint64_t seed);

    void train_epoch(std::size_t batches, std::size_t batch_size);
    BoundAuditResult audit();
    double exact_mi() const { return exact_mi_; }
    const DiscreteJoint& joint() const { return joint_; }

  private:
    std::pair<diff::Tensor, diff::Tensor> encode(std::span<const int> m_symbols,
                                                 std::span<const int> s_symbols);

    DiscreteJoint joint_;
    std::vector<int> counts_;
    double exact_mi_ = 0.0;
    double tau_;
    std::unique_ptr<models::Mlp> m_encoder_;
    std::unique_ptr<models::Mlp> s_encoder_;
    std::unique_ptr<diff::AdamOptimizer> opt_;
    Rng rng_;
};

struct GapCurve {
    std::vector<double> gaps;
    double tail_mean = 0.0;  // mean over the last 25% of epochs
};

GapCurve gap_curve(std::span<const double> acc_teacher, std::span<const double> acc_student);

}  // namespace amid::eval
