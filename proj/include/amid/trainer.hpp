#pragma once

#include <memory>
#include <string>
#include <vector>

#include "amid/config.hpp"
#include "amid/data.hpp"
#include "amid/eval.hpp"
#include "amid/losses.hpp"
#include "amid/models.hpp"
#include "amid/optim.hpp"
#include "amid/schedule.hpp"
#include "json.hpp"

namespace amid::train {

struct EpochRecord {
    std::size_t epoch = 0;
    losses::LossBreakdown train_mean;  // per-batch means over the epoch
    double disc_d1 = 0.0;              // unweighted D1 loss component mean
    bool warm_up = false;
    double lambda1 = 0.5;
    double lambda2 = 0.5;
    double d_est = 1.0;
    eval::MetricReport val;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    eval::MetricReport best_val;
    eval::MetricReport final_val;
    std::string metrics_csv;
    std::string final_checkpoint;
    std::string best_checkpoint;
};

// Runs the full protocol: auxiliary pretraining, warm-up on cls+jsd, then
// alternating discriminator/main steps with per-epoch lambda updates,
// validation metrics, and checkpointing.
class Trainer {
  public:
    explicit Trainer(AmidConfig cfg);

    TrainResult run(bool write_outputs = true);

    // Granular controls (tests drive these directly).
    void pretrain();
    void run_epoch();
    std::size_t epoch() const { return epoch_; }
    eval::MetricReport evaluate_val() const;
    eval::MetricReport evaluate_split(std::span<const data::Sample> samples) const;

    models::AmidModel& model() { return *model_; }
    const data::Dataset& dataset() const { return dataset_; }
    const AmidConfig& config() const { return cfg_; }
    const schedule::LambdaState& lambda_state() const { return lambda_; }
    double d_estimate() const;
    const std::vector<EpochRecord>& history() const { return history_; }

    // Full run state (weights, optimizer moments, lambda/d, RNG streams);
    // restoring reproduces subsequent epochs bit-identically.
    nlohmann::json state_json() const;
    void restore_state(const nlohmann::json& state);

  private:
    struct StepOutcome {
        losses::LossBreakdown breakdown;
        double disc_d1 = 0.0;
    };

    std::pair<double, double> effective_lambda() const;
    StepOutcome train_batch(const data::MultimodalBatch& batch, bool warm);
    void rebuild_optimizers();

    AmidConfig cfg_;
    data::Dataset dataset_;
    std::unique_ptr<models::AmidModel> model_;
    std::unique_ptr<diff::AdamOptimizer> main_opt_;
    std::unique_ptr<diff::AdamOptimizer> disc_opt_;
    schedule::LambdaState lambda_;
    schedule::DEstimator d_est_;
    double static_d_ = 1.0;
    Rng pair_rng_;
    std::size_t epoch_ = 0;
    bool pretrained_ = false;
    std::vector<EpochRecord> history_;
};

TrainResult train(const AmidConfig& cfg);

// Evaluates a model on one split: accuracies from the shared classifier, WA/UA
// on the student head, R@{1,5} retrieval against the training-split gallery.
eval::MetricReport evaluate_model(const models::AmidModel& model, const data::Dataset& dataset,
                                  std::span<const data::Sample> samples);

// Metrics CSV with the fixed column set; one train row and one val row per
// epoch.
void write_metrics_csv(const std::vector<EpochRecord>& history, const std::string& path);

struct AblationRow {
    std::string variant;
    std::uint64_t seed = 0;
    double acc_student = 0.0;  // best-validation student top-1
    double acc_teacher = 0.0;  // final-epoch teacher top-1
    double gap_tail = 0.0;     // mean teacher-student gap, last 25% of epochs
};

struct AblationTable {
    std::vector<AblationRow> rows;  // ordered by (variant, seed), baseline first
};

// Baseline plus one-flag-flipped variants over shared seeds.
AblationTable run_ablation_suite(const AmidConfig& cfg, std::vector<std::string> axes,
                                 bool write_outputs = true);
void write_ablation_csv(const AblationTable& table, const std::string& path);

std::string format_double(double v);  // shortest round-trip decimal

}  // namespace amid::train
