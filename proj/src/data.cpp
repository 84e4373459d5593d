#include "amid/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "amid/errors.hpp"
#include "amid/rng.hpp"
#include "json.hpp"

namespace amid::data {

namespace {

constexpr double kLatentNoise = 1.0;

std::size_t visible_class_coords(double rho, std::size_t class_dim) {
    return static_cast<std::size_t>(std::ceil(rho * static_cast<double>(class_dim)));
}

// Largest-remainder split of n into three parts proportional to the fractions.
std::array<std::size_t, 3> split_counts(std::size_t n, double f_train, double f_val,
                                        double f_test) {
    const double exact[3] = {f_train * n, f_val * n, f_test * n};
    std::array<std::size_t, 3> counts{};
    double rem[3];
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        counts[i] = static_cast<std::size_t>(std::floor(exact[i]));
        rem[i] = exact[i] - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    while (assigned < n) {
        int best = 0;
        for (int i = 1; i < 3; ++i)
            if (rem[i] > rem[best]) best = i;
        ++counts[best];
        rem[best] = -1.0;
        ++assigned;
    }
    return counts;
}

}  // namespace

void SyntheticSpec::validate() const {
    if (num_classes < 2) throw ConfigError("synthetic spec: need at least 2 classes");
    if (samples_per_class < 3) throw ConfigError("synthetic spec: need >= 3 samples per class");
    if (latent_class_dim == 0) throw ConfigError("synthetic spec: latent class dim must be >= 1");
    if (modalities.empty()) throw ConfigError("synthetic spec: no modalities declared");
    std::set<std::string> names;
    bool has_target = false;
    for (const auto& m : modalities) {
        if (m.name.empty()) throw ConfigError("synthetic spec: empty modality name");
        if (!names.insert(m.name).second)
            throw ConfigError("synthetic spec: duplicate modality '" + m.name + "'");
        if (m.dim == 0) throw ConfigError("synthetic spec: modality dim must be >= 1");
        if (m.rho < 0.0 || m.rho > 1.0)
            throw ConfigError("synthetic spec: rho must lie in [0,1] for '" + m.name + "'");
        if (m.role != "target" && m.role != "auxiliary")
            throw ConfigError("synthetic spec: unknown role '" + m.role + "'");
        has_target = has_target || m.role == "target";
    }
    if (!has_target) throw ConfigError("synthetic spec: at least one target modality required");
    const double sum = train_frac + val_frac + test_frac;
    if (std::fabs(sum - 1.0) > 1e-9) throw ConfigError("synthetic spec: split fractions must sum to 1");
    if (train_frac <= 0.0 || val_frac <= 0.0 || test_frac <= 0.0)
        throw ConfigError("synthetic spec: all split fractions must be positive");
    if (!(class_separation > 0.0))
        throw ConfigError("synthetic spec: class separation must be positive");
}

SyntheticSpec default_synthetic_spec() {
    SyntheticSpec spec;
    spec.num_classes = 8;
    spec.samples_per_class = 50;
    spec.latent_class_dim = 10;
    spec.latent_nuisance_dim = 6;
    spec.modalities = {
        {"video", 16, 11, 0.8, 0.3, "target"},
        {"audio", 12, 12, 0.3, 0.9, "auxiliary"},
    };
    spec.seed = 1;
    return spec;
}

std::vector<std::string> DatasetMeta::targets() const {
    std::vector<std::string> out;
    for (const auto& m : modalities)
        if (roles.at(m) == "target") out.push_back(m);
    return out;
}

std::vector<std::string> DatasetMeta::auxiliaries() const {
    std::vector<std::string> out;
    for (const auto& m : modalities)
        if (roles.at(m) == "auxiliary") out.push_back(m);
    return out;
}

std::size_t DatasetMeta::feature_dim(const std::string& modality) const {
    auto it = dims.find(modality);
    if (it == dims.end()) throw UsageError("unknown modality '" + modality + "'");
    return it->second;
}

Dataset generate(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);

    const std::size_t lc = spec.latent_class_dim;
    const std::size_t ln = spec.latent_nuisance_dim;
    const std::size_t lt = lc + ln;

    // Modalities in canonical order; the spec listing order does not matter.
    std::vector<ModalitySpec> mods = spec.modalities;
    std::sort(mods.begin(), mods.end(),
              [](const ModalitySpec& a, const ModalitySpec& b) { return a.name < b.name; });

    std::vector<std::vector<double>> class_means(spec.num_classes, std::vector<double>(lc));
    for (auto& mean : class_means)
        for (double& v : mean) v = spec.class_separation * rng.normal();

    // Fixed mixing matrices, one per modality, [lt x dim].
    std::vector<std::vector<double>> mixing(mods.size());
    for (std::size_t m = 0; m < mods.size(); ++m) {
        Rng wrng(mods[m].mixing_seed);
        mixing[m].resize(lt * mods[m].dim);
        const double inv = 1.0 / std::sqrt(static_cast<double>(lt));
        for (double& v : mixing[m]) v = inv * wrng.normal();
    }

    Dataset out;
    for (const auto& m : mods) {
        out.meta.modalities.push_back(m.name);
        out.meta.dims[m.name] = m.dim;
        out.meta.roles[m.name] = m.role;
    }
    out.meta.num_classes = spec.num_classes;

    const auto counts =
        split_counts(spec.samples_per_class, spec.train_frac, spec.val_frac, spec.test_frac);
    if (counts[0] == 0 || counts[1] == 0 || counts[2] == 0)
        throw ConfigError("synthetic spec: every split needs >= 1 sample per class");

    std::vector<double> latent(lt);
    auto draw_sample = [&](std::size_t c, const std::string& id) {
        for (std::size_t j = 0; j < lc; ++j)
            latent[j] = class_means[c][j] + kLatentNoise * rng.normal();
        for (std::size_t j = 0; j < ln; ++j) latent[lc + j] = rng.normal();

        Sample sample;
        sample.id = id;
        sample.label = static_cast<int>(c);
        for (std::size_t m = 0; m < mods.size(); ++m) {
            const std::size_t visible = visible_class_coords(mods[m].rho, lc);
            std::vector<double> x(mods[m].dim, 0.0);
            for (std::size_t j = 0; j < lt; ++j) {
                const bool masked = j < lc && j >= visible;
                if (masked) continue;
                const double u = latent[j];
                for (std::size_t k = 0; k < mods[m].dim; ++k)
                    x[k] += u * mixing[m][j * mods[m].dim + k];
            }
            for (double& v : x) v += mods[m].noise_sigma * rng.normal();
            sample.features[mods[m].name] = std::move(x);
        }
        return sample;
    };

    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
            Sample sample = draw_sample(c, "c" + std::to_string(c) + "_s" + std::to_string(s));
            if (s < counts[0]) {
                out.train.push_back(std::move(sample));
            } else if (s < counts[0] + counts[1]) {
                out.val.push_back(std::move(sample));
            } else {
                out.test.push_back(std::move(sample));
            }
        }
    }
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t s = 0; s < spec.aux_pretrain_per_class; ++s) {
            out.aux_pool.push_back(
                draw_sample(c, "c" + std::to_string(c) + "_p" + std::to_string(s)));
        }
    }
    return out;
}

// ---- JSON-lines persistence --------------------------------------------------

namespace {

using nlohmann::json;

void save_split(const Dataset& dataset, std::span<const Sample> samples,
                const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    for (const Sample& s : samples) {
        json record;
        record["id"] = s.id;
        record["label"] = s.label;
        json feats = json::object();
        for (const auto& [name, values] : s.features) feats[name] = values;
        record["modalities"] = std::move(feats);
        json roles = json::object();
        for (const auto& name : dataset.meta.modalities) roles[name] = dataset.meta.roles.at(name);
        record["roles"] = std::move(roles);
        out << record.dump() << "\n";
    }
}

std::vector<Sample> load_split(const std::string& path, DatasetMeta& meta, bool& meta_ready) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::vector<Sample> samples;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json record;
        try {
            record = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": invalid JSON (" +
                            e.what() + ")");
        }
        const auto where = path + ":" + std::to_string(line_no);
        if (!record.contains("id") || !record["id"].is_string())
            throw DataError(where + ": missing or invalid \"id\"");
        if (!record.contains("label") || !record["label"].is_number_integer())
            throw DataError(where + ": missing or invalid \"label\"");
        if (!record.contains("modalities") || !record["modalities"].is_object())
            throw DataError(where + ": missing \"modalities\" object");
        if (!record.contains("roles") || !record["roles"].is_object())
            throw DataError(where + ": missing \"roles\" object");

        Sample s;
        s.id = record["id"].get<std::string>();
        s.label = record["label"].get<int>();
        if (s.label < 0) throw DataError(where + ": negative label");
        for (const auto& [name, values] : record["modalities"].items()) {
            if (!values.is_array()) throw DataError(where + ": modality '" + name + "' not an array");
            s.features[name] = values.get<std::vector<double>>();
        }

        std::map<std::string, std::string> roles;
        for (const auto& [name, role] : record["roles"].items()) {
            const std::string r = role.get<std::string>();
            if (r != "target" && r != "auxiliary")
                throw DataError(where + ": unknown role '" + r + "' for modality '" + name + "'");
            roles[name] = r;
        }

        if (!meta_ready) {
            for (const auto& [name, values] : s.features) {
                meta.modalities.push_back(name);  // map iteration is sorted
                meta.dims[name] = values.size();
                if (!roles.count(name))
                    throw DataError(where + ": modality '" + name + "' has no declared role");
                meta.roles[name] = roles[name];
            }
            if (meta.modalities.empty()) throw DataError(where + ": record has no modalities");
            meta_ready = true;
        } else {
            for (const auto& name : meta.modalities) {
                auto it = s.features.find(name);
                if (it == s.features.end())
                    throw DataError(where + ": sample '" + s.id + "' missing modality '" + name +
                                    "'");
                if (it->second.size() != meta.dims[name])
                    throw DataError(where + ": ragged dims for modality '" + name + "' (" +
                                    std::to_string(it->second.size()) + " vs " +
                                    std::to_string(meta.dims[name]) + ")");
                if (roles.count(name) && roles[name] != meta.roles[name])
                    throw DataError(where + ": inconsistent role for modality '" + name + "'");
            }
            if (s.features.size() != meta.modalities.size())
                throw DataError(where + ": unexpected extra modalities");
        }
        samples.push_back(std::move(s));
    }
    if (samples.empty()) throw DataError(path + ": no records");
    return samples;
}

}  // namespace

void save_jsonl(const Dataset& dataset, const std::string& dir) {
    std::filesystem::create_directories(dir);
    save_split(dataset, dataset.train, dir + "/train.jsonl");
    save_split(dataset, dataset.val, dir + "/val.jsonl");
    save_split(dataset, dataset.test, dir + "/test.jsonl");
    if (!dataset.aux_pool.empty())
        save_split(dataset, dataset.aux_pool, dir + "/aux_pool.jsonl");
}

Dataset load_features(const std::string& dir) {
    Dataset out;
    bool meta_ready = false;
    out.train = load_split(dir + "/train.jsonl", out.meta, meta_ready);
    out.val = load_split(dir + "/val.jsonl", out.meta, meta_ready);
    out.test = load_split(dir + "/test.jsonl", out.meta, meta_ready);
    if (std::filesystem::exists(dir + "/aux_pool.jsonl"))
        out.aux_pool = load_split(dir + "/aux_pool.jsonl", out.meta, meta_ready);
    int max_label = 0;
    for (const auto* split : {&out.train, &out.val, &out.test})
        for (const Sample& s : *split) max_label = std::max(max_label, s.label);
    out.meta.num_classes = static_cast<std::size_t>(max_label) + 1;
    return out;
}

// ---- batching ----------------------------------------------------------------

MultimodalBatch make_batch(const DatasetMeta& meta, std::span<const Sample> samples,
                           std::span<const std::size_t> indices) {
    MultimodalBatch batch;
    const std::size_t b = indices.size();
    batch.ids.reserve(b);
    batch.labels.reserve(b);
    for (std::size_t idx : indices) {
        batch.ids.push_back(samples[idx].id);
        batch.labels.push_back(samples[idx].label);
    }
    for (const auto& name : meta.modalities) {
        const std::size_t dim = meta.dims.at(name);
        std::vector<double> block(b * dim);
        for (std::size_t i = 0; i < b; ++i) {
            const Sample& s = samples[indices[i]];
            auto it = s.features.find(name);
            if (it == s.features.end())
                throw DataError("sample '" + s.id + "' missing modality '" + name + "'");
            if (it->second.size() != dim)
                throw DataError("sample '" + s.id + "' has wrong dim for modality '" + name + "'");
            std::copy(it->second.begin(), it->second.end(), block.begin() + i * dim);
        }
        batch.features[name] = diff::Tensor::constant({b, dim}, std::move(block));
    }
    return batch;
}

MultimodalBatch whole_split_batch(const DatasetMeta& meta, std::span<const Sample> samples) {
    std::vector<std::size_t> idx(samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return make_batch(meta, samples, idx);
}

std::vector<MultimodalBatch> epoch_batches(const DatasetMeta& meta,
                                           std::span<const Sample> samples,
                                           std::size_t batch_size, std::uint64_t seed,
                                           std::size_t epoch) {
    if (batch_size < 2) throw ConfigError("batch size must be at least 2");
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(Rng::derive(seed, 0xB17C000ULL + epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = rng.index(i);
        std::swap(order[i - 1], order[j]);
    }
    std::vector<MultimodalBatch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t extent = std::min(batch_size, order.size() - start);
        if (extent < 2) break;  // a singleton batch cannot form pairs
        batches.push_back(make_batch(
            meta, samples, std::span<const std::size_t>(order.data() + start, extent)));
    }
    return batches;
}

}  // namespace amid::data
