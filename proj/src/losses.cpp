#include "amid/losses.hpp"

#include <cmath>
#include <sstream>

#include "amid/errors.hpp"

namespace amid::losses {

using diff::Tensor;

diff::Tensor h_matrix(const diff::Tensor& m, const diff::Tensor& x, double tau) {
    if (!(tau > 0.0)) throw ConfigError("h_matrix: temperature must be positive");
    return diff::softmax_rows(diff::scale(diff::cosine_matrix(m, x), 1.0 / tau));
}

diff::Tensor mi_contrast(const diff::Tensor& m, const diff::Tensor& x,
                         const pairing::PairIndex& index, double tau) {
    const std::size_t b = index.batch_size();
    if (m.rows() != b || x.rows() != b)
        throw UsageError("mi_contrast: pair index batch size does not match representations");

    std::vector<double> pos(b * b, 0.0), neg(b * b, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j : index.anchors[i].positives) pos[i * b + j] = 1.0;
        for (std::size_t l : index.anchors[i].negatives) neg[i * b + l] = 1.0;
    }
    const Tensor h = h_matrix(m, x, tau);
    const Tensor log_h = diff::log(diff::clamp_prob(h));
    const Tensor log_not_h = diff::log(diff::clamp_prob(diff::sub_from_scalar(1.0, h)));
    const Tensor picked =
        diff::add(diff::mul(log_h, Tensor::constant({b, b}, std::move(pos))),
                  diff::mul(log_not_h, Tensor::constant({b, b}, std::move(neg))));
    return diff::scale(diff::sum_all(picked), -1.0 / static_cast<double>(b));
}

diff::Tensor adversarial(const diff::Tensor& student_rows, const diff::Tensor& partner_rows,
                         models::DiscriminatorPair& disc, double lambda1, double lambda2,
                         double d_est) {
    if (d_est < 1.0) throw ConfigError("adversarial: d estimate must be >= 1");
    const auto disc_params = disc.parameters();
    diff::FreezeGuard freeze(disc_params);  // no gradient into D1/D2 here

    const std::size_t b = student_rows.rows();
    Tensor loss = diff::scale(diff::sum_all(diff::log(disc.d1.probabilities(student_rows))),
                              -lambda1 / static_cast<double>(b));
    if (partner_rows.defined() && partner_rows.rows() > 0) {
        loss = diff::add(
            loss, diff::scale(diff::sum_all(diff::log(disc.d2.probabilities(partner_rows))),
                              -lambda2 / d_est));
    }
    return loss;
}

diff::Tensor discriminator_loss(const diff::Tensor& teacher_rows,
                                const diff::Tensor& student_rows,
                                const diff::Tensor& teacher_multi,
                                const diff::Tensor& student_partner,
                                models::DiscriminatorPair& disc, double lambda1, double lambda2,
                                double d_est) {
    if (d_est < 1.0) throw ConfigError("discriminator_loss: d estimate must be >= 1");
    const Tensor m = teacher_rows.detach();
    const Tensor s = student_rows.detach();

    const std::size_t b = m.rows();
    const Tensor d1_real = diff::log(disc.d1.probabilities(m));
    const Tensor d1_fake =
        diff::log(diff::clamp_prob(diff::sub_from_scalar(1.0, disc.d1.probabilities(s))));
    Tensor loss = diff::scale(diff::add(diff::sum_all(d1_real), diff::sum_all(d1_fake)),
                              -lambda1 / static_cast<double>(b));

    const bool have_multi = teacher_multi.defined() && teacher_multi.rows() > 0;
    if (have_multi) {
        const Tensor mm = teacher_multi.detach();
        const Tensor sp = student_partner.detach();
        const Tensor d2_real = diff::log(disc.d2.probabilities(mm));
        const Tensor d2_fake =
            diff::log(diff::clamp_prob(diff::sub_from_scalar(1.0, disc.d2.probabilities(sp))));
        loss = diff::add(loss,
                         diff::scale(diff::add(diff::sum_all(d2_real), diff::sum_all(d2_fake)),
                                     -lambda2 / d_est));
    }
    return loss;
}

double discriminator_d1_component(const diff::Tensor& teacher_rows,
                                  const diff::Tensor& student_rows,
                                  models::DiscriminatorPair& disc) {
    const Tensor m = teacher_rows.detach();
    const Tensor s = student_rows.detach();
    const std::size_t b = m.rows();
    const Tensor real = diff::log(disc.d1.probabilities(m));
    const Tensor fake =
        diff::log(diff::clamp_prob(diff::sub_from_scalar(1.0, disc.d1.probabilities(s))));
    return -(diff::sum_all(real).scalar_value() + diff::sum_all(fake).scalar_value()) /
           static_cast<double>(b);
}

namespace {

Tensor one_hot_checked(std::span<const int> labels, std::size_t num_classes) {
    std::vector<double> v(labels.size() * num_classes, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
            throw DataError("classification: label " + std::to_string(labels[i]) +
                            " out of range at row " + std::to_string(i));
        v[i * num_classes + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    return Tensor::constant({labels.size(), num_classes}, std::move(v));
}

Tensor cross_entropy_mean(const diff::Tensor& logits, const Tensor& one_hot) {
    const Tensor log_probs = diff::log(diff::clamp_prob(diff::softmax_rows(logits)));
    return diff::scale(diff::sum_all(diff::mul(log_probs, one_hot)),
                       -1.0 / static_cast<double>(logits.rows()));
}

}  // namespace

diff::Tensor classification(const diff::Tensor& logits_student,
                            const diff::Tensor& logits_teacher, std::span<const int> labels) {
    if (logits_student.rows() != labels.size() || logits_teacher.rows() != labels.size())
        throw UsageError("classification: logits row count does not match labels");
    const Tensor targets = one_hot_checked(labels, logits_student.cols());
    return diff::add(cross_entropy_mean(logits_student, targets),
                     cross_entropy_mean(logits_teacher, targets));
}

diff::Tensor jsd(const diff::Tensor& logits_student, const diff::Tensor& logits_teacher) {
    if (logits_student.shape() != logits_teacher.shape())
        throw UsageError("jsd: logit shapes differ");
    const Tensor ps = diff::clamp_prob(diff::softmax_rows(logits_student));
    const Tensor pm = diff::clamp_prob(diff::softmax_rows(logits_teacher));
    const Tensor mid = diff::scale(diff::add(ps, pm), 0.5);
    const Tensor log_mid = diff::log(mid);
    const Tensor kl_s = diff::mul(ps, diff::sub(diff::log(ps), log_mid));
    const Tensor kl_m = diff::mul(pm, diff::sub(diff::log(pm), log_mid));
    const double inv_b = 1.0 / static_cast<double>(logits_student.rows());
    return diff::scale(diff::sum_all(diff::add(kl_s, kl_m)), 0.5 * inv_b);
}

bool LossBreakdown::finite() const {
    for (double v : {cls, jsd, mi_s, mi_a, adv, disc, total})
        if (!std::isfinite(v)) return false;
    return true;
}

std::string LossBreakdown::describe() const {
    std::ostringstream out;
    out << "cls=" << cls << " jsd=" << jsd << " mi_s=" << mi_s << " mi_a=" << mi_a
        << " adv=" << adv << " disc=" << disc << " total=" << total;
    return out.str();
}

std::pair<diff::Tensor, LossBreakdown> total_loss(const LossTerms& terms, double alpha1,
                                                  double alpha2, double alpha3, bool warm_up) {
    if (!terms.cls.defined() || !terms.jsd.defined())
        throw UsageError("total_loss: cls and jsd terms are always required");

    LossBreakdown report;
    report.cls = terms.cls.scalar_value();
    report.jsd = terms.jsd.scalar_value();
    report.mi_s = terms.mi_s.defined() ? terms.mi_s.scalar_value() : 0.0;
    report.mi_a = terms.mi_a.defined() ? terms.mi_a.scalar_value() : 0.0;
    report.adv = terms.adv.defined() ? terms.adv.scalar_value() : 0.0;
    report.disc = terms.disc;

    Tensor total = diff::add(terms.cls, terms.jsd);
    if (!warm_up) {
        if (terms.mi_s.defined()) total = diff::add(total, diff::scale(terms.mi_s, alpha1));
        if (terms.mi_a.defined()) total = diff::add(total, diff::scale(terms.mi_a, alpha2));
        if (terms.adv.defined()) total = diff::add(total, diff::scale(terms.adv, alpha3));
    }
    report.total = total.scalar_value();
    if (!report.finite())
        throw NumericError("total_loss: non-finite loss part [" + report.describe() + "]");
    return {total, report};
}

}  // namespace amid::losses
