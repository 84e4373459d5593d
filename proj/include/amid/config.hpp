#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "amid/data.hpp"

namespace amid::train {

// Full run configuration. Flat `key = value` text files; every key is
// enumerated in the README and unknown keys are rejected.
struct AmidConfig {
    // objective weights and temperatures
    double alpha1 = 4.0;
    double alpha2 = 1.6;
    double alpha3 = 1.0;
    double tau = 0.5;
    double beta = 0.9;

    // schedule
    std::size_t t_start = 5;
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    double lr = 1e-3;
    std::size_t aux_pretrain_epochs = 10;

    // sizes
    std::size_t embed_dim = 32;
    std::size_t hidden_dim = 64;
    std::size_t fusion_hidden_dim = 64;
    std::size_t disc_hidden_dim = 32;

    std::uint64_t seed = 1;

    // ablation switches
    bool fixed_teacher = false;
    bool no_warmup = false;
    bool no_d2 = false;
    bool uniform_lambda = false;
    bool mi_s_only = false;
    bool no_mi_a = false;
    bool no_adv = false;
    bool nce_positive_set = false;
    bool student_alone = false;   // no-distillation baseline regime
    bool teacher_alone = false;   // teacher-only regime
    bool static_d_estimate = false;

    std::size_t ablation_seeds = 5;

    // data source: synthetic (generated from the spec below) or a feature dir
    std::string data_kind = "synthetic";  // "synthetic" | "features"
    std::string data_path;
    std::optional<std::uint64_t> data_seed;  // defaults to seed
    data::SyntheticSpec synthetic = data::default_synthetic_spec();

    std::string out_dir = "out";

    void validate() const;  // throws ConfigError

    // Effective switches after regime resolution (mi_s_only implies no_mi_a
    // and no_adv; no_warmup forces t_start 0; and so on).
    std::size_t effective_t_start() const { return no_warmup ? 0 : t_start; }
    bool mi_s_active() const;
    bool mi_a_active() const;
    bool adv_active() const;
};

// Parses a config stream / file. Unknown keys raise ConfigError naming the
// offending token.
AmidConfig parse_config(std::istream& in);
AmidConfig load_config(const std::string& path);

// Applies one `key=value` override (the CLI --set flag).
void apply_override(AmidConfig& cfg, const std::string& key, const std::string& value);

}  // namespace amid::train
