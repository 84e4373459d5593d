#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "amid/tensor.hpp"

namespace amid::data {

// One synthetic modality: a fixed random linear readout of the (rho-masked
// class ++ shared nuisance) latent, plus Gaussian observation noise.
struct ModalitySpec {
    std::string name;
    std::size_t dim = 16;
    std::uint64_t mixing_seed = 0;
    double noise_sigma = 0.5;
    double rho = 1.0;         // fraction of class-discriminative coordinates visible
    std::string role = "target";  // "target" | "auxiliary"
};

struct SyntheticSpec {
    std::size_t num_classes = 8;
    std::size_t samples_per_class = 50;
    std::size_t latent_class_dim = 10;
    std::size_t latent_nuisance_dim = 6;
    // Scale of the class means relative to the unit within-class latent
    // noise; larger values separate the classes more cleanly.
    double class_separation = 2.0;
    // Extra samples per class reserved for auxiliary-extractor pretraining,
    // standing in for the large external corpora such extractors are
    // normally pretrained on. Zero falls back to pretraining on the train
    // split.
    std::size_t aux_pretrain_per_class = 100;
    std::vector<ModalitySpec> modalities;
    double train_frac = 0.6;
    double val_frac = 0.2;
    double test_frac = 0.2;
    std::uint64_t seed = 1;

    void validate() const;  // throws ConfigError
};

// The desk-scale reference design: a weak target modality and an information-
// rich auxiliary modality over the same latent classes.
SyntheticSpec default_synthetic_spec();

struct DatasetMeta {
    // Modalities in canonical (lexicographic) order; this order is the
    // declared fusion order everywhere downstream.
    std::vector<std::string> modalities;
    std::map<std::string, std::size_t> dims;
    std::map<std::string, std::string> roles;
    std::size_t num_classes = 0;

    std::vector<std::string> targets() const;
    std::vector<std::string> auxiliaries() const;
    std::size_t feature_dim(const std::string& modality) const;
};

struct Sample {
    std::string id;
    int label = 0;
    std::map<std::string, std::vector<double>> features;
};

struct Dataset {
    DatasetMeta meta;
    std::vector<Sample> train, val, test;
    // Optional disjoint pool for auxiliary pretraining (may be empty).
    std::vector<Sample> aux_pool;
};

struct MultimodalBatch {
    std::vector<std::string> ids;
    std::vector<int> labels;
    std::map<std::string, diff::Tensor> features;  // per modality, [B, dim]
    std::size_t size() const { return labels.size(); }
};

// Deterministic generation: the dataset is a pure function of the spec.
Dataset generate(const SyntheticSpec& spec);

// JSON-lines persistence: <dir>/{train,val,test}.jsonl, one record per sample
//   {"id": str, "label": int, "modalities": {name: [floats]},
//    "roles": {name: "target"|"auxiliary"}}
void save_jsonl(const Dataset& dataset, const std::string& dir);
Dataset load_features(const std::string& dir);

// Batch assembly; validates that every declared modality is present.
MultimodalBatch make_batch(const DatasetMeta& meta, std::span<const Sample> samples,
                           std::span<const std::size_t> indices);
MultimodalBatch whole_split_batch(const DatasetMeta& meta, std::span<const Sample> samples);

// Per-epoch uniform shuffle keyed by (seed, epoch); a trailing batch smaller
// than 2 is dropped.
std::vector<MultimodalBatch> epoch_batches(const DatasetMeta& meta,
                                           std::span<const Sample> samples,
                                           std::size_t batch_size, std::uint64_t seed,
                                           std::size_t epoch);

}  // namespace amid::data
