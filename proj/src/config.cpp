#include "amid/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "amid/errors.hpp"

namespace amid::train {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: invalid number '" + v + "' for key '" + key + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const unsigned long long u = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return u;
    } catch (const std::exception&) {
        throw ConfigError("config: invalid integer '" + v + "' for key '" + key + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: invalid boolean '" + v + "' for key '" + key + "'");
}

data::ModalitySpec* find_modality(AmidConfig& cfg, const std::string& name) {
    for (auto& m : cfg.synthetic.modalities)
        if (m.name == name) return &m;
    return nullptr;
}

}  // namespace

void AmidConfig::validate() const {
    if (alpha1 < 0.0 || alpha2 < 0.0 || alpha3 < 0.0)
        throw ConfigError("config: alpha weights must be nonnegative");
    if (!(tau > 0.0)) throw ConfigError("config: tau must be positive");
    if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("config: beta must lie in (0,1)");
    if (epochs == 0) throw ConfigError("config: epochs must be >= 1");
    if (effective_t_start() > epochs)
        throw ConfigError("config: t_start must not exceed epochs");
    if (batch_size < 2) throw ConfigError("config: batch_size must be >= 2");
    if (!(lr > 0.0)) throw ConfigError("config: lr must be positive");
    if (embed_dim == 0 || hidden_dim == 0 || disc_hidden_dim == 0 || fusion_hidden_dim == 0)
        throw ConfigError("config: dims must be >= 1");
    if (data_kind != "synthetic" && data_kind != "features")
        throw ConfigError("config: data.kind must be 'synthetic' or 'features'");
    if (data_kind == "features" && data_path.empty())
        throw ConfigError("config: data.path required when data.kind = features");
    if (data_kind == "synthetic") synthetic.validate();
    if (student_alone && teacher_alone)
        throw ConfigError("config: student_alone and teacher_alone are mutually exclusive");
}

bool AmidConfig::mi_s_active() const {
    if (student_alone || teacher_alone) return false;
    return alpha1 > 0.0;
}

bool AmidConfig::mi_a_active() const {
    if (student_alone || teacher_alone || mi_s_only || no_mi_a) return false;
    return alpha2 > 0.0;
}

bool AmidConfig::adv_active() const {
    if (student_alone || teacher_alone || mi_s_only || no_adv) return false;
    return alpha3 > 0.0;
}

void apply_override(AmidConfig& cfg, const std::string& raw_key, const std::string& raw_value) {
    const std::string key = trim(raw_key);
    const std::string value = trim(raw_value);
    if (key.empty()) throw ConfigError("config: empty key");

    if (key == "alpha1") { cfg.alpha1 = parse_double(key, value); return; }
    if (key == "alpha2") { cfg.alpha2 = parse_double(key, value); return; }
    if (key == "alpha3") { cfg.alpha3 = parse_double(key, value); return; }
    if (key == "tau") { cfg.tau = parse_double(key, value); return; }
    if (key == "beta") { cfg.beta = parse_double(key, value); return; }
    if (key == "t_start") { cfg.t_start = parse_u64(key, value); return; }
    if (key == "epochs") { cfg.epochs = parse_u64(key, value); return; }
    if (key == "batch_size") { cfg.batch_size = parse_u64(key, value); return; }
    if (key == "lr") { cfg.lr = parse_double(key, value); return; }
    if (key == "aux_pretrain_epochs") { cfg.aux_pretrain_epochs = parse_u64(key, value); return; }
    if (key == "embed_dim") { cfg.embed_dim = parse_u64(key, value); return; }
    if (key == "hidden_dim") { cfg.hidden_dim = parse_u64(key, value); return; }
    if (key == "disc_hidden_dim") { cfg.disc_hidden_dim = parse_u64(key, value); return; }
    if (key == "fusion_hidden_dim") { cfg.fusion_hidden_dim = parse_u64(key, value); return; }
    if (key == "seed") { cfg.seed = parse_u64(key, value); return; }
    if (key == "ablation_seeds") { cfg.ablation_seeds = parse_u64(key, value); return; }
    if (key == "out_dir") { cfg.out_dir = value; return; }

    if (key == "fixed_teacher") { cfg.fixed_teacher = parse_bool(key, value); return; }
    if (key == "no_warmup") { cfg.no_warmup = parse_bool(key, value); return; }
    if (key == "no_d2") { cfg.no_d2 = parse_bool(key, value); return; }
    if (key == "uniform_lambda") { cfg.uniform_lambda = parse_bool(key, value); return; }
    if (key == "mi_s_only") { cfg.mi_s_only = parse_bool(key, value); return; }
    if (key == "no_mi_a") { cfg.no_mi_a = parse_bool(key, value); return; }
    if (key == "no_adv") { cfg.no_adv = parse_bool(key, value); return; }
    if (key == "nce_positive_set") { cfg.nce_positive_set = parse_bool(key, value); return; }
    if (key == "student_alone") { cfg.student_alone = parse_bool(key, value); return; }
    if (key == "teacher_alone") { cfg.teacher_alone = parse_bool(key, value); return; }
    if (key == "static_d_estimate") { cfg.static_d_estimate = parse_bool(key, value); return; }

    if (key == "data.kind") { cfg.data_kind = value; return; }
    if (key == "data.path") { cfg.data_path = value; return; }
    if (key == "data.seed") { cfg.data_seed = parse_u64(key, value); return; }
    if (key == "data.classes") { cfg.synthetic.num_classes = parse_u64(key, value); return; }
    if (key == "data.samples_per_class") {
        cfg.synthetic.samples_per_class = parse_u64(key, value);
        return;
    }
    if (key == "data.latent_class_dim") {
        cfg.synthetic.latent_class_dim = parse_u64(key, value);
        return;
    }
    if (key == "data.latent_nuisance_dim") {
        cfg.synthetic.latent_nuisance_dim = parse_u64(key, value);
        return;
    }
    if (key == "data.class_separation") {
        cfg.synthetic.class_separation = parse_double(key, value);
        return;
    }
    if (key == "data.aux_pretrain_per_class") {
        cfg.synthetic.aux_pretrain_per_class = parse_u64(key, value);
        return;
    }
    if (key == "data.train_frac") { cfg.synthetic.train_frac = parse_double(key, value); return; }
    if (key == "data.val_frac") { cfg.synthetic.val_frac = parse_double(key, value); return; }
    if (key == "data.test_frac") { cfg.synthetic.test_frac = parse_double(key, value); return; }
    if (key == "data.modalities") {
        const auto names = split_list(value);
        if (names.empty()) throw ConfigError("config: data.modalities is empty");
        std::vector<data::ModalitySpec> mods;
        for (const auto& name : names) {
            data::ModalitySpec spec;
            if (auto* existing = find_modality(cfg, name)) spec = *existing;
            spec.name = name;
            mods.push_back(spec);
        }
        cfg.synthetic.modalities = std::move(mods);
        return;
    }

    // data.<modality>.{dim,rho,sigma,role,mixing_seed}
    if (key.rfind("data.", 0) == 0) {
        const std::string rest = key.substr(5);
        const auto dot = rest.find('.');
        if (dot != std::string::npos) {
            const std::string mod_name = rest.substr(0, dot);
            const std::string field = rest.substr(dot + 1);
            data::ModalitySpec* mod = find_modality(cfg, mod_name);
            if (mod == nullptr)
                throw ConfigError("config: unknown modality '" + mod_name + "' in key '" + key +
                                  "' (declare it in data.modalities first)");
            if (field == "dim") { mod->dim = parse_u64(key, value); return; }
            if (field == "rho") { mod->rho = parse_double(key, value); return; }
            if (field == "sigma") { mod->noise_sigma = parse_double(key, value); return; }
            if (field == "role") { mod->role = value; return; }
            if (field == "mixing_seed") { mod->mixing_seed = parse_u64(key, value); return; }
            throw ConfigError("config: unknown modality field '" + field + "' in key '" + key +
                              "'");
        }
    }

    throw ConfigError("config: unknown key '" + key + "'");
}

AmidConfig parse_config(std::istream& in) {
    AmidConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected 'key = value', got '" + line + "'");
        apply_override(cfg, line.substr(0, eq), line.substr(eq + 1));
    }
    return cfg;
}

AmidConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return parse_config(in);
}

}  // namespace amid::train
