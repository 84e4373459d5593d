#include "amid/models.hpp"

#include <cmath>
#include <fstream>

#include "amid/errors.hpp"
#include "amid/optim.hpp"

namespace amid::models {

using diff::Parameter;
using diff::Tensor;

namespace {

std::vector<double> he_normal(std::size_t in, std::size_t out, Rng& rng) {
    std::vector<double> w(in * out);
    const double std = std::sqrt(2.0 / static_cast<double>(in));
    for (double& v : w) v = std * rng.normal();
    return w;
}

Tensor one_hot(std::span<const int> labels, std::size_t num_classes) {
    std::vector<double> v(labels.size() * num_classes, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i)
        v[i * num_classes + static_cast<std::size_t>(labels[i])] = 1.0;
    return Tensor::constant({labels.size(), num_classes}, std::move(v));
}

Tensor cross_entropy_mean(const Tensor& logits, std::span<const int> labels) {
    const Tensor probs = diff::clamp_prob(diff::softmax_rows(logits));
    const Tensor picked = diff::mul(diff::log(probs), one_hot(labels, logits.cols()));
    return diff::scale(diff::sum_all(picked), -1.0 / static_cast<double>(labels.size()));
}

}  // namespace

// ---- layers -------------------------------------------------------------------

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
    : weight(name + ".weight", {in, out}, he_normal(in, out, rng)),
      bias(name + ".bias", {out}, std::vector<double>(out, 0.0)) {}

Linear Linear::block_identity(const std::string& name, std::size_t in, std::size_t out) {
    if (in % out != 0) throw UsageError("block_identity: in must be a multiple of out");
    const std::size_t blocks = in / out;
    std::vector<double> w(in * out, 0.0);
    const double v = 1.0 / static_cast<double>(blocks);
    for (std::size_t i = 0; i < in; ++i) w[i * out + (i % out)] = v;
    Rng dummy(0);
    Linear layer(name, in, out, dummy);
    auto wm = layer.weight.values_mut();
    std::copy(w.begin(), w.end(), wm.begin());
    layer.weight.set_trainable(false);
    layer.bias.set_trainable(false);
    return layer;
}

Tensor Linear::operator()(const Tensor& x) const {
    return diff::add(diff::matmul(x, weight.tensor()), bias.tensor());
}

void Linear::collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

Mlp::Mlp(const std::string& name, std::vector<std::size_t> dims, Rng& rng)
    : dims_(std::move(dims)) {
    if (dims_.size() < 2) throw UsageError("mlp: need at least one linear layer");
    for (std::size_t i = 0; i + 1 < dims_.size(); ++i)
        layers_.emplace_back(name + ".l" + std::to_string(i), dims_[i], dims_[i + 1], rng);
}

Tensor Mlp::forward(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = layers_[i](h);
        if (i + 1 < layers_.size()) h = diff::leaky_relu(h, kLeakySlope);
    }
    return h;
}

std::vector<Parameter*> Mlp::parameters() {
    std::vector<Parameter*> out;
    for (auto& layer : layers_) layer.collect(out);
    return out;
}

void Mlp::set_trainable(bool on) {
    for (auto& layer : layers_) {
        layer.weight.set_trainable(on);
        layer.bias.set_trainable(on);
    }
}

Discriminator::Discriminator(const std::string& name, std::size_t in, std::size_t hidden,
                             std::size_t linear_layers, Rng& rng)
    : net_(name,
           [&] {
               std::vector<std::size_t> dims{in};
               for (std::size_t i = 0; i + 1 < linear_layers; ++i) dims.push_back(hidden);
               dims.push_back(1);
               return dims;
           }(),
           rng) {}

Tensor Discriminator::probabilities(const Tensor& reps) const {
    return diff::clamp_prob(diff::sigmoid(net_.forward(reps)));
}

std::vector<Parameter*> DiscriminatorPair::parameters() {
    auto out = d1.parameters();
    for (Parameter* p : d2.parameters()) out.push_back(p);
    return out;
}

// ---- AmidModel ------------------------------------------------------------------

AmidModel::AmidModel(const data::DatasetMeta& meta, ModelSizes sizes, Rng& rng)
    : meta_(meta), sizes_(sizes) {
    if (meta_.modalities.empty()) throw ConfigError("model: dataset has no modalities");
    if (meta_.num_classes < 2) throw ConfigError("model: need at least two classes");
    if (meta_.targets().empty()) throw ConfigError("model: no target modality");
    if (meta_.auxiliaries().empty()) throw ConfigError("model: no auxiliary modality");

    const std::size_t d = sizes_.embed_dim;
    const std::size_t h = sizes_.hidden_dim;
    for (const auto& name : meta_.modalities) {
        extractors_[name] = std::make_unique<Mlp>(
            "encoder." + name, std::vector<std::size_t>{meta_.dims.at(name), h, h, d}, rng);
    }
    const std::size_t n = meta_.modalities.size();
    const std::size_t k = meta_.targets().size();
    fusion_ = std::make_unique<Mlp>("teacher_fusion",
                                    std::vector<std::size_t>{n * d, sizes_.fusion_hidden_dim, d},
                                    rng);
    student_head_ = std::make_unique<Linear>("student_head", k * d, d, rng);
    aux_head_ =
        std::make_unique<Linear>(Linear::block_identity("aux_head", (n - k) * d, d));
    classifier_ = std::make_unique<Linear>("classifier", d, meta_.num_classes, rng);
    const std::size_t dh = sizes_.disc_hidden_dim;
    discriminators_ = std::make_unique<DiscriminatorPair>(DiscriminatorPair{
        Discriminator("disc1", d, dh, 5, rng), Discriminator("disc2", d, dh, 3, rng)});
}

Representations AmidModel::embed(const data::MultimodalBatch& batch) const {
    std::map<std::string, Tensor> encoded;
    for (const auto& name : meta_.modalities) {
        auto it = batch.features.find(name);
        if (it == batch.features.end()) {
            const std::string who = batch.ids.empty() ? "<empty batch>" : batch.ids.front();
            throw DataError("batch starting at sample '" + who + "' is missing modality '" +
                            name + "'");
        }
        encoded[name] = extractors_.at(name)->forward(it->second);
    }

    std::vector<Tensor> teacher_in;
    for (const auto& name : meta_.modalities) {
        auto frozen = teacher_extractors_.find(name);
        if (frozen != teacher_extractors_.end()) {
            teacher_in.push_back(frozen->second->forward(batch.features.at(name)));
        } else {
            teacher_in.push_back(encoded[name]);
        }
    }
    std::vector<Tensor> student_in;
    for (const auto& name : meta_.targets()) student_in.push_back(encoded[name]);
    std::vector<Tensor> aux_in;
    for (const auto& name : meta_.auxiliaries()) aux_in.push_back(encoded[name]);

    Representations reps;
    reps.teacher = fusion_->forward(diff::concat_cols(teacher_in));
    reps.student = (*student_head_)(diff::concat_cols(student_in));
    reps.aux = (*aux_head_)(diff::concat_cols(aux_in));
    return reps;
}

Tensor AmidModel::classify(const Tensor& reps) const { return (*classifier_)(reps); }

Tensor AmidModel::discriminate(int which, const Tensor& reps) const {
    if (which == 1) return discriminators_->d1.probabilities(reps);
    if (which == 2) return discriminators_->d2.probabilities(reps);
    throw UsageError("discriminate: discriminator id must be 1 or 2");
}

std::vector<Parameter*> AmidModel::target_extractor_params() {
    std::vector<Parameter*> out;
    for (const auto& name : meta_.targets())
        for (Parameter* p : extractors_.at(name)->parameters()) out.push_back(p);
    return out;
}

std::vector<Parameter*> AmidModel::aux_extractor_params() {
    std::vector<Parameter*> out;
    for (const auto& name : meta_.auxiliaries())
        for (Parameter* p : extractors_.at(name)->parameters()) out.push_back(p);
    return out;
}

std::vector<Parameter*> AmidModel::teacher_fusion_params() { return fusion_->parameters(); }

std::vector<Parameter*> AmidModel::student_head_params() {
    std::vector<Parameter*> out;
    student_head_->collect(out);
    return out;
}

std::vector<Parameter*> AmidModel::classifier_params() {
    std::vector<Parameter*> out;
    classifier_->collect(out);
    return out;
}

std::vector<Parameter*> AmidModel::discriminator_params() {
    return discriminators_->parameters();
}

std::vector<Parameter*> AmidModel::all_params() {
    std::vector<Parameter*> out;
    for (const auto& name : meta_.modalities)
        for (Parameter* p : extractors_.at(name)->parameters()) out.push_back(p);
    for (auto& [name, mlp] : teacher_extractors_)
        for (Parameter* p : mlp->parameters()) out.push_back(p);
    for (Parameter* p : fusion_->parameters()) out.push_back(p);
    student_head_->collect(out);
    aux_head_->collect(out);
    classifier_->collect(out);
    for (Parameter* p : discriminators_->parameters()) out.push_back(p);
    return out;
}

void AmidModel::freeze_auxiliary() {
    for (const auto& name : meta_.auxiliaries()) extractors_.at(name)->set_trainable(false);
    aux_frozen_ = true;
}

void AmidModel::freeze_teacher() {
    if (teacher_frozen()) return;
    Rng dummy(0);
    for (const auto& name : meta_.targets()) {
        const std::size_t d = sizes_.embed_dim;
        const std::size_t h = sizes_.hidden_dim;
        auto clone = std::make_unique<Mlp>(
            "teacher_encoder." + name, std::vector<std::size_t>{meta_.dims.at(name), h, h, d},
            dummy);
        auto src = extractors_.at(name)->parameters();
        auto dst = clone->parameters();
        for (std::size_t i = 0; i < src.size(); ++i) {
            auto values = dst[i]->values_mut();
            const auto from = src[i]->values();
            std::copy(from.begin(), from.end(), values.begin());
        }
        clone->set_trainable(false);
        teacher_extractors_[name] = std::move(clone);
    }
    fusion_->set_trainable(false);
}

// ---- checkpoint io ----------------------------------------------------------------

nlohmann::json AmidModel::to_json() const {
    nlohmann::json j;
    j["format"] = "amid-checkpoint";
    j["version"] = 1;
    j["embed_dim"] = sizes_.embed_dim;
    j["hidden_dim"] = sizes_.hidden_dim;
    j["fusion_hidden_dim"] = sizes_.fusion_hidden_dim;
    j["disc_hidden_dim"] = sizes_.disc_hidden_dim;
    j["num_classes"] = meta_.num_classes;
    j["teacher_frozen"] = teacher_frozen();
    j["aux_frozen"] = aux_frozen_;
    nlohmann::json mods = nlohmann::json::array();
    for (const auto& name : meta_.modalities) {
        mods.push_back({{"name", name},
                        {"dim", meta_.dims.at(name)},
                        {"role", meta_.roles.at(name)}});
    }
    j["modalities"] = std::move(mods);

    nlohmann::json params = nlohmann::json::object();
    auto* self = const_cast<AmidModel*>(this);
    for (Parameter* p : self->all_params()) {
        params[p->name()] = {{"shape", p->shape()},
                             {"values", std::vector<double>(p->values().begin(),
                                                            p->values().end())},
                             {"trainable", p->trainable()}};
    }
    j["params"] = std::move(params);
    return j;
}

AmidModel AmidModel::from_json(const nlohmann::json& j) {
    if (!j.contains("format") || j["format"] != "amid-checkpoint")
        throw DataError("checkpoint: unknown format");
    if (j.value("version", 0) != 1) throw DataError("checkpoint: unsupported version");

    data::DatasetMeta meta;
    for (const auto& m : j.at("modalities")) {
        const std::string name = m.at("name").get<std::string>();
        meta.modalities.push_back(name);
        meta.dims[name] = m.at("dim").get<std::size_t>();
        meta.roles[name] = m.at("role").get<std::string>();
    }
    meta.num_classes = j.at("num_classes").get<std::size_t>();
    ModelSizes sizes{j.at("embed_dim").get<std::size_t>(), j.at("hidden_dim").get<std::size_t>(),
                     j.at("fusion_hidden_dim").get<std::size_t>(),
                     j.at("disc_hidden_dim").get<std::size_t>()};

    Rng rng(0);
    AmidModel model(meta, sizes, rng);
    if (j.value("teacher_frozen", false)) model.freeze_teacher();

    const auto& params = j.at("params");
    for (Parameter* p : model.all_params()) {
        if (!params.contains(p->name()))
            throw DataError("checkpoint: missing parameter '" + p->name() + "'");
        const auto& entry = params.at(p->name());
        const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        if (shape != p->shape())
            throw DataError("checkpoint: shape mismatch for '" + p->name() + "'");
        const auto values = entry.at("values").get<std::vector<double>>();
        auto dst = p->values_mut();
        std::copy(values.begin(), values.end(), dst.begin());
        p->set_trainable(entry.at("trainable").get<bool>());
    }
    model.aux_frozen_ = j.value("aux_frozen", false);
    return model;
}

void save_checkpoint(const AmidModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << model.to_json().dump() << "\n";
}

AmidModel load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("checkpoint '" + path + "': invalid JSON (" + std::string(e.what()) + ")");
    }
    return AmidModel::from_json(j);
}

// ---- auxiliary pretraining -----------------------------------------------------------

void pretrain_auxiliary(AmidModel& model, const data::Dataset& dataset, std::size_t epochs,
                        std::size_t batch_size, double lr, std::uint64_t seed) {
    if (epochs == 0) {
        model.freeze_auxiliary();
        return;
    }
    Rng rng(Rng::derive(seed, 0xA0C));
    Linear head("aux_pretrain_head", model.sizes().embed_dim, model.meta().num_classes, rng);

    std::vector<Parameter*> params = model.aux_extractor_params();
    head.collect(params);
    diff::AdamOptimizer opt(params, lr);

    // The dedicated pool mimics the external corpora auxiliary extractors are
    // normally pretrained on; without one, fall back to the train split.
    const auto& pool = dataset.aux_pool.empty() ? dataset.train : dataset.aux_pool;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        const auto batches = data::epoch_batches(model.meta(), pool, batch_size,
                                                 Rng::derive(seed, 0xA0D), epoch);
        for (const auto& batch : batches) {
            opt.zero_grad();
            const Representations reps = model.embed(batch);
            const Tensor loss = cross_entropy_mean(head(reps.aux), batch.labels);
            diff::backward(loss);
            opt.step();
        }
    }
    model.freeze_auxiliary();
}

}  // namespace amid::models
