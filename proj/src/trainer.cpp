#include "amid/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "amid/errors.hpp"
#include "amid/gradcheck.hpp"
#include "amid/pairing.hpp"

namespace amid::train {

using diff::Tensor;

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kDataStream = 2;
constexpr std::uint64_t kPairStream = 3;

Tensor ce_single(const Tensor& logits, std::span<const int> labels) {
    std::vector<double> onehot(labels.size() * logits.cols(), 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= logits.cols())
            throw DataError("train: label out of range");
        onehot[i * logits.cols() + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    const Tensor mask = Tensor::constant({labels.size(), logits.cols()}, std::move(onehot));
    const Tensor log_probs = diff::log(diff::clamp_prob(diff::softmax_rows(logits)));
    return diff::scale(diff::sum_all(diff::mul(log_probs, mask)),
                       -1.0 / static_cast<double>(labels.size()));
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

Trainer::Trainer(AmidConfig cfg) : cfg_(std::move(cfg)), pair_rng_(0) {
    cfg_.validate();
    if (cfg_.data_kind == "features") {
        dataset_ = data::load_features(cfg_.data_path);
    } else {
        data::SyntheticSpec spec = cfg_.synthetic;
        spec.seed = cfg_.data_seed.value_or(cfg_.seed);
        dataset_ = data::generate(spec);
    }
    Rng init_rng(Rng::derive(cfg_.seed, kInitStream));
    model_ = std::make_unique<models::AmidModel>(
        dataset_.meta, models::ModelSizes{cfg_.embed_dim, cfg_.hidden_dim, cfg_.fusion_hidden_dim,
                            cfg_.disc_hidden_dim}, init_rng);
    pair_rng_ = Rng(Rng::derive(cfg_.seed, kPairStream));
    rebuild_optimizers();

    std::vector<int> train_labels;
    train_labels.reserve(dataset_.train.size());
    for (const auto& s : dataset_.train) train_labels.push_back(s.label);
    static_d_ = schedule::expected_multi_count(train_labels, cfg_.batch_size);
    // Seed the running estimate at the expectation rather than the floor, so
    // the enhanced-discriminator weight is sane from the first adversarial
    // batch onward.
    d_est_.est = static_d_;
}

void Trainer::rebuild_optimizers() {
    std::vector<diff::Parameter*> main_params = model_->target_extractor_params();
    for (auto* p : model_->teacher_fusion_params()) main_params.push_back(p);
    for (auto* p : model_->student_head_params()) main_params.push_back(p);
    for (auto* p : model_->classifier_params()) main_params.push_back(p);
    main_opt_ = std::make_unique<diff::AdamOptimizer>(main_params, cfg_.lr);
    disc_opt_ = std::make_unique<diff::AdamOptimizer>(model_->discriminator_params(), cfg_.lr);
}

double Trainer::d_estimate() const { return cfg_.static_d_estimate ? static_d_ : d_est_.est; }

std::pair<double, double> Trainer::effective_lambda() const {
    if (cfg_.no_d2) return {1.0, 0.0};
    if (cfg_.uniform_lambda) return {0.5, 0.5};
    return {lambda_.lambda1(), lambda_.lambda2()};
}

void Trainer::pretrain() {
    models::pretrain_auxiliary(*model_, dataset_, cfg_.aux_pretrain_epochs, cfg_.batch_size,
                               cfg_.lr, cfg_.seed);
    pretrained_ = true;
}

Trainer::StepOutcome Trainer::train_batch(const data::MultimodalBatch& batch, bool warm) {
    StepOutcome outcome;
    const auto labels = std::span<const int>(batch.labels);

    if (cfg_.student_alone || cfg_.teacher_alone) {
        const auto reps = model_->embed(batch);
        const Tensor logits =
            model_->classify(cfg_.student_alone ? reps.student : reps.teacher);
        losses::LossTerms terms;
        terms.cls = ce_single(logits, labels);
        terms.jsd = Tensor::scalar(0.0);
        auto [total, report] = losses::total_loss(terms, 0.0, 0.0, 0.0, true);
        main_opt_->zero_grad();
        diff::backward(total);
        main_opt_->step();
        outcome.breakdown = report;
        return outcome;
    }

    const auto index = pairing::build_pair_index(labels);
    const auto mi_index = cfg_.nce_positive_set ? pairing::self_pairs_only(index) : index;
    const bool adv = !warm && cfg_.adv_active();
    const auto [lambda1, lambda2] = effective_lambda();
    const double d_est = d_estimate();

    std::vector<std::size_t> multi_rows;
    std::vector<std::size_t> partner_rows;
    if (adv && !cfg_.no_d2) {
        const auto pairs = pairing::multi_sample_pairs(index, pair_rng_);
        multi_rows.reserve(pairs.size());
        partner_rows.reserve(pairs.size());
        for (const auto& [v, partner] : pairs) {
            multi_rows.push_back(v);
            partner_rows.push_back(partner);
        }
    }

    // [a] discriminator step on detached representations
    if (adv) {
        const auto reps = model_->embed(batch);
        Tensor m_multi, s_partner;
        if (!multi_rows.empty()) {
            m_multi = diff::gather_rows(reps.teacher, multi_rows);
            s_partner = diff::gather_rows(reps.student, partner_rows);
        }
        disc_opt_->zero_grad();
        const Tensor d_loss =
            losses::discriminator_loss(reps.teacher, reps.student, m_multi, s_partner,
                                       model_->discriminators(), lambda1, lambda2, d_est);
        diff::backward(d_loss);
        disc_opt_->step();
        outcome.breakdown.disc = d_loss.scalar_value();
        outcome.disc_d1 =
            losses::discriminator_d1_component(reps.teacher, reps.student,
                                               model_->discriminators());
    }

    // [b] main step against the just-updated discriminators
    const auto reps = model_->embed(batch);
    const Tensor logits_s = model_->classify(reps.student);
    const Tensor logits_m = model_->classify(reps.teacher);

    losses::LossTerms terms;
    terms.cls = losses::classification(logits_s, logits_m, labels);
    terms.jsd = losses::jsd(logits_s, logits_m);
    terms.disc = outcome.breakdown.disc;
    if (!warm) {
        if (cfg_.mi_s_active())
            terms.mi_s = losses::mi_contrast(reps.teacher, reps.student, mi_index, cfg_.tau);
        if (cfg_.mi_a_active())
            terms.mi_a = losses::mi_contrast(reps.teacher, reps.aux, mi_index, cfg_.tau);
        if (adv) {
            Tensor s_partner;
            if (!partner_rows.empty()) s_partner = diff::gather_rows(reps.student, partner_rows);
            terms.adv = losses::adversarial(reps.student, s_partner, model_->discriminators(),
                                            lambda1, lambda2, d_est);
        }
    }
    auto [total, report] = losses::total_loss(terms, cfg_.alpha1, cfg_.alpha2, cfg_.alpha3, warm);
    main_opt_->zero_grad();
    diff::backward(total);
    main_opt_->step();

    // [c] epoch accumulators
    if (!warm) {
        schedule::accumulate_similarities(reps.teacher, reps.student, index, lambda_);
        d_est_.update(index.multi_count());
    }

    outcome.breakdown = report;
    return outcome;
}

void Trainer::run_epoch() {
    if (!pretrained_) throw UsageError("run_epoch: call pretrain() first");
    const std::size_t t_start = cfg_.effective_t_start();
    const bool warm = epoch_ < t_start;
    const bool regimes_full = !cfg_.student_alone && !cfg_.teacher_alone;

    if (!warm && regimes_full && cfg_.fixed_teacher && !model_->teacher_frozen()) {
        model_->freeze_teacher();
    }

    const auto batches = data::epoch_batches(dataset_.meta, dataset_.train, cfg_.batch_size,
                                             Rng::derive(cfg_.seed, kDataStream), epoch_);
    if (batches.empty()) throw ConfigError("run_epoch: training split yields no batches");

    EpochRecord record;
    record.epoch = epoch_;
    record.warm_up = warm;
    losses::LossBreakdown sum;
    double d1_sum = 0.0;
    std::size_t d1_count = 0;
    for (const auto& batch : batches) {
        const StepOutcome out = train_batch(batch, warm);
        sum.cls += out.breakdown.cls;
        sum.jsd += out.breakdown.jsd;
        sum.mi_s += out.breakdown.mi_s;
        sum.mi_a += out.breakdown.mi_a;
        sum.adv += out.breakdown.adv;
        sum.disc += out.breakdown.disc;
        sum.total += out.breakdown.total;
        if (!warm && cfg_.adv_active()) {
            d1_sum += out.disc_d1;
            ++d1_count;
        }
    }
    const double inv = 1.0 / static_cast<double>(batches.size());
    record.train_mean = {sum.cls * inv, sum.jsd * inv,  sum.mi_s * inv, sum.mi_a * inv,
                         sum.adv * inv, sum.disc * inv, sum.total * inv};
    record.disc_d1 = d1_count > 0 ? d1_sum / static_cast<double>(d1_count) : 0.0;

    if (!warm && regimes_full && cfg_.adv_active() && !cfg_.uniform_lambda && !cfg_.no_d2) {
        schedule::end_of_epoch_lambda(lambda_, cfg_.beta);
    }
    const auto [l1, l2] = effective_lambda();
    record.lambda1 = l1;
    record.lambda2 = l2;
    record.d_est = d_estimate();

    record.val = evaluate_val();
    history_.push_back(std::move(record));
    ++epoch_;
}

eval::MetricReport evaluate_model(const models::AmidModel& model, const data::Dataset& dataset,
                                  std::span<const data::Sample> samples) {
    const auto batch = data::whole_split_batch(dataset.meta, samples);
    const auto reps = model.embed(batch);
    const Tensor logits_s = model.classify(reps.student);
    const Tensor logits_m = model.classify(reps.teacher);

    eval::MetricReport report;
    report.acc_student = eval::top1(logits_s, batch.labels);
    report.acc_teacher = eval::top1(logits_m, batch.labels);
    report.gap = report.acc_teacher - report.acc_student;
    report.top1 = report.acc_student;
    const auto [wa, ua] = eval::wa_ua(logits_s, batch.labels);
    report.wa = wa;
    report.ua = ua;

    // Retrieval: queries from the evaluated split, gallery from the training
    // split, student representations, cosine metric.
    const auto gallery_batch = data::whole_split_batch(dataset.meta, dataset.train);
    const auto gallery_reps = model.embed(gallery_batch);
    const std::size_t ks[] = {1, 5};
    report.r_at_k = eval::knn_retrieval(reps.student, batch.labels, gallery_reps.student,
                                        gallery_batch.labels, ks, false);
    return report;
}

eval::MetricReport Trainer::evaluate_split(std::span<const data::Sample> samples) const {
    return evaluate_model(*model_, dataset_, samples);
}

eval::MetricReport Trainer::evaluate_val() const { return evaluate_split(dataset_.val); }

TrainResult Trainer::run(bool write_outputs) {
    if (write_outputs) std::filesystem::create_directories(cfg_.out_dir);
    if (!pretrained_) pretrain();

    nlohmann::json best_weights;
    std::size_t best_epoch = 0;
    eval::MetricReport best_val;
    double best_acc = -1.0;
    while (epoch_ < cfg_.epochs) {
        run_epoch();
        const auto& rec = history_.back();
        if (rec.val.acc_student > best_acc) {
            best_acc = rec.val.acc_student;
            best_epoch = rec.epoch;
            best_val = rec.val;
            best_weights = model_->to_json();
        }
    }

    TrainResult result;
    result.history = history_;
    result.best_epoch = best_epoch;
    result.best_val = best_val;
    result.final_val = history_.back().val;
    if (write_outputs) {
        result.metrics_csv = cfg_.out_dir + "/metrics.csv";
        write_metrics_csv(history_, result.metrics_csv);
        result.final_checkpoint = cfg_.out_dir + "/final.ckpt.json";
        models::save_checkpoint(*model_, result.final_checkpoint);
        result.best_checkpoint = cfg_.out_dir + "/best.ckpt.json";
        std::ofstream out(result.best_checkpoint);
        if (!out) throw DataError("cannot write '" + result.best_checkpoint + "'");
        out << best_weights.dump() << "\n";
    }
    return result;
}

// ---- run-state serialization ---------------------------------------------------

namespace {

nlohmann::json adam_json(const diff::AdamOptimizer& opt) {
    nlohmann::json slots = nlohmann::json::array();
    for (const auto& slot : opt.slots()) slots.push_back({{"m", slot.m}, {"v", slot.v}});
    return {{"step_count", opt.step_count()}, {"slots", std::move(slots)}};
}

void adam_restore(diff::AdamOptimizer& opt, const nlohmann::json& j) {
    std::vector<diff::AdamOptimizer::Slot> slots;
    for (const auto& s : j.at("slots")) {
        diff::AdamOptimizer::Slot slot;
        slot.m = s.at("m").get<std::vector<double>>();
        slot.v = s.at("v").get<std::vector<double>>();
        slots.push_back(std::move(slot));
    }
    opt.restore(std::move(slots), j.at("step_count").get<std::int64_t>());
}

}  // namespace

nlohmann::json Trainer::state_json() const {
    nlohmann::json j;
    j["epoch"] = epoch_;
    j["pretrained"] = pretrained_;
    j["model"] = model_->to_json();
    j["main_adam"] = adam_json(*main_opt_);
    j["disc_adam"] = adam_json(*disc_opt_);
    j["lambda"] = {{"logit", lambda_.logit},
                   {"weight", lambda_.weight},
                   {"self_sum", lambda_.self_sum},
                   {"self_count", lambda_.self_count},
                   {"cross_sum", lambda_.cross_sum},
                   {"cross_count", lambda_.cross_count}};
    j["d_est"] = d_est_.est;
    j["pair_rng"] = pair_rng_.state();
    return j;
}

void Trainer::restore_state(const nlohmann::json& state) {
    model_ = std::make_unique<models::AmidModel>(
        models::AmidModel::from_json(state.at("model")));
    rebuild_optimizers();
    adam_restore(*main_opt_, state.at("main_adam"));
    adam_restore(*disc_opt_, state.at("disc_adam"));
    const auto& l = state.at("lambda");
    lambda_.logit = l.at("logit").get<std::array<double, 2>>();
    lambda_.weight = l.at("weight").get<std::array<double, 2>>();
    lambda_.self_sum = l.at("self_sum").get<double>();
    lambda_.self_count = l.at("self_count").get<std::size_t>();
    lambda_.cross_sum = l.at("cross_sum").get<double>();
    lambda_.cross_count = l.at("cross_count").get<std::size_t>();
    d_est_.est = state.at("d_est").get<double>();
    pair_rng_.restore(state.at("pair_rng").get<std::string>());
    epoch_ = state.at("epoch").get<std::size_t>();
    pretrained_ = state.at("pretrained").get<bool>();
    history_.clear();
}

TrainResult train(const AmidConfig& cfg) { return Trainer(cfg).run(); }

// ---- CSV output ------------------------------------------------------------------

void write_metrics_csv(const std::vector<EpochRecord>& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write metrics csv '" + path + "'");
    out << "epoch,split,loss_cls,loss_jsd,loss_mi_s,loss_mi_a,loss_adv,loss_disc,"
           "lambda1,lambda2,d_est,acc_student,acc_teacher,gap,r_at_1,r_at_5,wa,ua\n";
    for (const auto& rec : history) {
        const auto& m = rec.train_mean;
        out << rec.epoch << ",train," << format_double(m.cls) << "," << format_double(m.jsd)
            << "," << format_double(m.mi_s) << "," << format_double(m.mi_a) << ","
            << format_double(m.adv) << "," << format_double(m.disc) << ","
            << format_double(rec.lambda1) << "," << format_double(rec.lambda2) << ","
            << format_double(rec.d_est) << ",,,,,,,\n";
        const auto& v = rec.val;
        out << rec.epoch << ",val,,,,,,,,,," << format_double(v.acc_student) << ","
            << format_double(v.acc_teacher) << "," << format_double(v.gap) << ","
            << format_double(v.r_at_k.count(1) ? v.r_at_k.at(1) : 0.0) << ","
            << format_double(v.r_at_k.count(5) ? v.r_at_k.at(5) : 0.0) << ","
            << format_double(v.wa) << "," << format_double(v.ua) << "\n";
    }
}

// ---- ablation suite ------------------------------------------------------------------

namespace {

const std::set<std::string>& known_axes() {
    static const std::set<std::string> axes = {
        "fixed_teacher", "no_warmup",     "no_d2",        "uniform_lambda",
        "mi_s_only",     "no_mi_a",       "no_adv",       "nce_positive_set",
        "student_alone", "teacher_alone"};
    return axes;
}

}  // namespace

AblationTable run_ablation_suite(const AmidConfig& cfg, std::vector<std::string> axes,
                                 bool write_outputs) {
    for (const auto& axis : axes) {
        if (!known_axes().count(axis))
            throw ConfigError("ablate: unknown axis '" + axis + "'");
    }
    std::sort(axes.begin(), axes.end());
    axes.erase(std::unique(axes.begin(), axes.end()), axes.end());

    std::vector<std::string> variants = {"baseline"};
    for (const auto& axis : axes) variants.push_back(axis);

    AblationTable table;
    for (const auto& variant : variants) {
        for (std::size_t i = 0; i < cfg.ablation_seeds; ++i) {
            AmidConfig run_cfg = cfg;
            run_cfg.seed = cfg.seed + i;
            if (variant != "baseline") apply_override(run_cfg, variant, "true");
            run_cfg.out_dir = cfg.out_dir + "/" + variant + "/seed" + std::to_string(run_cfg.seed);

            Trainer trainer(run_cfg);
            const TrainResult result = trainer.run(write_outputs);

            std::vector<double> teacher_series, student_series;
            for (const auto& rec : result.history) {
                teacher_series.push_back(rec.val.acc_teacher);
                student_series.push_back(rec.val.acc_student);
            }
            const auto curve = eval::gap_curve(teacher_series, student_series);

            AblationRow row;
            row.variant = variant;
            row.seed = run_cfg.seed;
            row.acc_student = result.best_val.acc_student;
            row.acc_teacher = result.final_val.acc_teacher;
            row.gap_tail = curve.tail_mean;
            table.rows.push_back(std::move(row));
        }
    }
    if (write_outputs) {
        std::filesystem::create_directories(cfg.out_dir);
        write_ablation_csv(table, cfg.out_dir + "/ablation.csv");
    }
    return table;
}

void write_ablation_csv(const AblationTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write ablation csv '" + path + "'");
    out << "variant,seed,acc_student,acc_teacher,gap_tail\n";
    for (const auto& row : table.rows) {
        out << row.variant << "," << row.seed << "," << format_double(row.acc_student) << ","
            << format_double(row.acc_teacher) << "," << format_double(row.gap_tail) << "\n";
    }
}

}  // namespace amid::train
