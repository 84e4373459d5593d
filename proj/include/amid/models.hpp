#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "amid/data.hpp"
#include "amid/rng.hpp"
#include "amid/tensor.hpp"
#include "json.hpp"

namespace amid::models {

inline constexpr double kLeakySlope = 0.01;

struct Linear {
    diff::Parameter weight;  // [in, out]
    diff::Parameter bias;    // [out]

    Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng);
    // Identity map padded/averaged over row blocks; used for the fixed
    // auxiliary projection.
    static Linear block_identity(const std::string& name, std::size_t in, std::size_t out);

    diff::Tensor operator()(const diff::Tensor& x) const;
    void collect(std::vector<diff::Parameter*>& out);
};

// Plain MLP: linear layers with LeakyReLU between them, linear output.
class Mlp {
  public:
    Mlp(const std::string& name, std::vector<std::size_t> dims, Rng& rng);
    diff::Tensor forward(const diff::Tensor& x) const;
    std::vector<diff::Parameter*> parameters();
    void set_trainable(bool on);
    std::size_t input_dim() const { return dims_.front(); }
    std::size_t output_dim() const { return dims_.back(); }

  private:
    std::vector<std::size_t> dims_;
    std::vector<Linear> layers_;
};

// Sigmoid-output MLP over representations; outputs are clamped probabilities.
class Discriminator {
  public:
    // linear_layers counts the linear maps: 5 for the fundamental
    // discriminator, 3 for the enhanced one.
    Discriminator(const std::string& name, std::size_t in, std::size_t hidden,
                  std::size_t linear_layers, Rng& rng);
    diff::Tensor probabilities(const diff::Tensor& reps) const;  // [*,1] in (eps, 1-eps)
    std::vector<diff::Parameter*> parameters() { return net_.parameters(); }

  private:
    Mlp net_;
};

struct DiscriminatorPair {
    Discriminator d1;  // fundamental: whole batch
    Discriminator d2;  // enhanced: multi-sample-class subset
    std::vector<diff::Parameter*> parameters();
};

struct Representations {
    diff::Tensor teacher;  // M [B,d]
    diff::Tensor student;  // S [B,d]
    diff::Tensor aux;      // A [B,d]
};

struct ModelSizes {
    std::size_t embed_dim = 32;
    std::size_t hidden_dim = 64;
    std::size_t fusion_hidden_dim = 64;
    std::size_t disc_hidden_dim = 32;
};

// The network set: shared per-modality extractors, concat-fusion teacher head,
// student and auxiliary projections, the shared-parameter classifier, and the
// two discriminators.
class AmidModel {
  public:
    AmidModel(const data::DatasetMeta& meta, ModelSizes sizes, Rng& rng);

    Representations embed(const data::MultimodalBatch& batch) const;
    diff::Tensor classify(const diff::Tensor& reps) const;  // same weights for S and M
    diff::Tensor discriminate(int which, const diff::Tensor& reps) const;

    const data::DatasetMeta& meta() const { return meta_; }
    const ModelSizes& sizes() const { return sizes_; }
    DiscriminatorPair& discriminators() { return *discriminators_; }

    // Parameter groups (the gradient-routing vocabulary).
    std::vector<diff::Parameter*> target_extractor_params();
    std::vector<diff::Parameter*> aux_extractor_params();
    std::vector<diff::Parameter*> teacher_fusion_params();
    std::vector<diff::Parameter*> student_head_params();
    std::vector<diff::Parameter*> classifier_params();
    std::vector<diff::Parameter*> discriminator_params();
    std::vector<diff::Parameter*> all_params();

    void freeze_auxiliary();  // after pretraining
    bool auxiliary_frozen() const { return aux_frozen_; }

    // Fixed-teacher mode: clones the target extractors for the teacher's
    // exclusive use and freezes the whole teacher path, so the student keeps
    // training its own (shared no more) extractor.
    void freeze_teacher();
    bool teacher_frozen() const { return !teacher_extractors_.empty(); }

    // Flat parameter-name -> {shape, values} checkpoint (versioned).
    nlohmann::json to_json() const;
    static AmidModel from_json(const nlohmann::json& j);

  private:
    data::DatasetMeta meta_;
    ModelSizes sizes_;
    std::map<std::string, std::unique_ptr<Mlp>> extractors_;
    std::map<std::string, std::unique_ptr<Mlp>> teacher_extractors_;  // fixed-teacher clones
    std::unique_ptr<Mlp> fusion_;
    std::unique_ptr<Linear> student_head_;
    std::unique_ptr<Linear> aux_head_;  // fixed, identity-initialized
    std::unique_ptr<Linear> classifier_;
    std::unique_ptr<DiscriminatorPair> discriminators_;
    bool aux_frozen_ = false;
};

void save_checkpoint(const AmidModel& model, const std::string& path);
AmidModel load_checkpoint(const std::string& path);

// Trains the auxiliary extractors with cross-entropy through a throwaway
// classifier head, then freezes them. epochs == 0 freezes at initialization.
void pretrain_auxiliary(AmidModel& model, const data::Dataset& dataset, std::size_t epochs,
                        std::size_t batch_size, double lr, std::uint64_t seed);

}  // namespace amid::models
