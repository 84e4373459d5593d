#pragma once

#include <span>
#include <string>
#include <utility>

#include "amid/models.hpp"
#include "amid/pairing.hpp"
#include "amid/tensor.hpp"

namespace amid::losses {

// Row-stochastic similarity model: row i is the softmax over all columns of
// cos(m_i, x_j) / tau. Requires tau > 0 and nonzero rows.
diff::Tensor h_matrix(const diff::Tensor& m, const diff::Tensor& x, double tau);

// Class-aware contrastive MI lower-bound loss:
//   -(1/B) sum_i [ sum_{j in eta_i} log h_ij + sum_{l in xi_i} log(1 - h_il) ]
// Instantiated with x = student rows and x = auxiliary rows. Always >= 0.
diff::Tensor mi_contrast(const diff::Tensor& m, const diff::Tensor& x,
                         const pairing::PairIndex& index, double tau);

// Generator-side adversarial loss. Gradient flows only into the
// representation paths; the discriminators are frozen for this evaluation.
//   -(lambda1/B) sum_i log D1(s_i)  -  (lambda2/d_est) sum_v log D2(s_partner_v)
// partner_rows may be empty (w = 0), dropping the second term.
diff::Tensor adversarial(const diff::Tensor& student_rows, const diff::Tensor& partner_rows,
                         models::DiscriminatorPair& disc, double lambda1, double lambda2,
                         double d_est);

// Discriminator-side loss over (teacher=real, student=fake) pairings; all
// representation inputs are detached, so only D1/D2 receive gradient.
diff::Tensor discriminator_loss(const diff::Tensor& teacher_rows,
                                const diff::Tensor& student_rows,
                                const diff::Tensor& teacher_multi,
                                const diff::Tensor& student_partner,
                                models::DiscriminatorPair& disc, double lambda1, double lambda2,
                                double d_est);

// The D1 component of discriminator_loss with unit weight; the warm-up
// diagnostics track it separately from the lambda-weighted total.
double discriminator_d1_component(const diff::Tensor& teacher_rows,
                                  const diff::Tensor& student_rows,
                                  models::DiscriminatorPair& disc);

// Mean cross-entropy of the student logits plus mean cross-entropy of the
// teacher logits; both logit sets must come from the shared classifier.
diff::Tensor classification(const diff::Tensor& logits_student,
                            const diff::Tensor& logits_teacher, std::span<const int> labels);

// Mean Jensen-Shannon divergence between the two predictive distributions,
// natural log; value in [0, ln 2].
diff::Tensor jsd(const diff::Tensor& logits_student, const diff::Tensor& logits_teacher);

// Per-step scalar report. disc is logged but never added to total.
struct LossBreakdown {
    double cls = 0.0;
    double jsd = 0.0;
    double mi_s = 0.0;
    double mi_a = 0.0;
    double adv = 0.0;
    double disc = 0.0;
    double total = 0.0;
    bool finite() const;
    std::string describe() const;
};

// Differentiable terms of one step; an undefined tensor means the term is
// inactive and contributes zero.
struct LossTerms {
    diff::Tensor cls;
    diff::Tensor jsd;
    diff::Tensor mi_s;
    diff::Tensor mi_a;
    diff::Tensor adv;
    double disc = 0.0;  // reported only
};

// Combines the terms into the training objective. During warm-up the total is
// cls + jsd; afterwards cls + jsd + a1*mi_s + a2*mi_a + a3*adv. Throws
// NumericError with the full breakdown when any part is non-finite.
std::pair<diff::Tensor, LossBreakdown> total_loss(const LossTerms& terms, double alpha1,
                                                  double alpha2, double alpha3, bool warm_up);

}  // namespace amid::losses
