#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <vector>

#include "amid/data.hpp"
#include "amid/errors.hpp"
#include "amid/losses.hpp"
#include "amid/models.hpp"
#include "amid/optim.hpp"
#include "amid/rng.hpp"
#include "doctest.h"

using namespace amid;
using diff::Tensor;

namespace {

data::Dataset small_dataset(std::uint64_t seed, std::size_t classes = 3,
                            std::size_t per_class = 6) {
    data::SyntheticSpec spec = data::default_synthetic_spec();
    spec.num_classes = classes;
    spec.samples_per_class = per_class;
    spec.seed = seed;
    return data::generate(spec);
}

std::vector<double> snapshot(std::vector<diff::Parameter*> params) {
    std::vector<double> out;
    for (auto* p : params) out.insert(out.end(), p->values().begin(), p->values().end());
    return out;
}

}  // namespace

TEST_CASE("embedding shapes follow the contract") {
    const auto ds = small_dataset(1);
    Rng rng(1);
    models::AmidModel model(ds.meta, {32, 16}, rng);
    const auto batch = data::whole_split_batch(ds.meta, ds.val);
    const auto reps = model.embed(batch);
    const std::size_t b = batch.size();
    CHECK(reps.teacher.shape() == diff::Shape{b, 32});
    CHECK(reps.student.shape() == diff::Shape{b, 32});
    CHECK(reps.aux.shape() == diff::Shape{b, 32});
    const Tensor logits = model.classify(reps.student);
    CHECK(logits.shape() == diff::Shape{b, ds.meta.num_classes});
}

TEST_CASE("embed is a pure function of weights and batch") {
    const auto ds = small_dataset(2);
    Rng rng(2);
    models::AmidModel model(ds.meta, {16, 12}, rng);
    const auto batch = data::whole_split_batch(ds.meta, ds.val);
    const auto a = model.embed(batch);
    const auto b = model.embed(batch);
    for (std::size_t i = 0; i < a.teacher.size(); ++i) CHECK(a.teacher[i] == b.teacher[i]);
    for (std::size_t i = 0; i < a.student.size(); ++i) CHECK(a.student[i] == b.student[i]);
}

TEST_CASE("missing modality is a data error") {
    const auto ds = small_dataset(3);
    Rng rng(3);
    models::AmidModel model(ds.meta, {16, 12}, rng);
    auto batch = data::whole_split_batch(ds.meta, ds.val);
    batch.features.erase("audio");
    CHECK_THROWS_AS((void)model.embed(batch), DataError);
}

TEST_CASE("zero-weight fusion makes all teacher rows equal") {
    const auto ds = small_dataset(4);
    Rng rng(4);
    models::AmidModel model(ds.meta, {8, 10}, rng);
    for (auto* p : model.teacher_fusion_params()) {
        auto v = p->values_mut();
        std::fill(v.begin(), v.end(), 0.0);
    }
    const auto reps = model.embed(data::whole_split_batch(ds.meta, ds.val));
    for (std::size_t i = 1; i < reps.teacher.rows(); ++i)
        for (std::size_t j = 0; j < reps.teacher.cols(); ++j)
            CHECK(reps.teacher.at(i, j) == reps.teacher.at(0, j));
}

TEST_CASE("frozen auxiliary extractor gets no gradient while fusion still does") {
    const auto ds = small_dataset(5);
    Rng rng(5);
    models::AmidModel model(ds.meta, {8, 10}, rng);
    model.freeze_auxiliary();
    for (auto* p : model.all_params()) p->zero_grad();
    const auto reps = model.embed(data::whole_split_batch(ds.meta, ds.val));
    diff::backward(diff::mean_all(reps.teacher));
    double aux_grad = 0.0;
    for (auto* p : model.aux_extractor_params())
        for (double g : p->grad()) aux_grad = std::max(aux_grad, std::fabs(g));
    CHECK(aux_grad == 0.0);
    double fusion_grad = 0.0;
    for (auto* p : model.teacher_fusion_params())
        for (double g : p->grad()) fusion_grad = std::max(fusion_grad, std::fabs(g));
    CHECK(fusion_grad > 0.0);
}

TEST_CASE("shared classifier is bitwise identical across heads") {
    const auto ds = small_dataset(6);
    Rng rng(6);
    models::AmidModel model(ds.meta, {8, 10}, rng);
    const auto reps = model.embed(data::whole_split_batch(ds.meta, ds.val));
    const Tensor as_student = model.classify(reps.student);
    const Tensor as_teacher = model.classify(reps.student);  // same rows, either role
    for (std::size_t i = 0; i < as_student.size(); ++i)
        CHECK(as_student[i] == as_teacher[i]);
}

TEST_CASE("zero-initialized classifier yields uniform softmax rows") {
    const auto ds = small_dataset(7);
    Rng rng(7);
    models::AmidModel model(ds.meta, {8, 10}, rng);
    for (auto* p : model.classifier_params()) {
        auto v = p->values_mut();
        std::fill(v.begin(), v.end(), 0.0);
    }
    const auto reps = model.embed(data::whole_split_batch(ds.meta, ds.val));
    const Tensor probs = diff::softmax_rows(model.classify(reps.student));
    for (std::size_t i = 0; i < probs.size(); ++i)
        CHECK(probs[i] == doctest::Approx(1.0 / ds.meta.num_classes).epsilon(1e-12));
}

TEST_CASE("discriminators output clamped probabilities, 0.5 at zero init") {
    const auto ds = small_dataset(8);
    Rng rng(8);
    models::AmidModel model(ds.meta, {8, 10}, rng);
    for (auto* p : model.discriminator_params()) {
        auto v = p->values_mut();
        std::fill(v.begin(), v.end(), 0.0);
    }
    const auto reps = model.embed(data::whole_split_batch(ds.meta, ds.val));
    for (int which : {1, 2}) {
        const Tensor probs = model.discriminate(which, reps.student);
        for (std::size_t i = 0; i < probs.size(); ++i) CHECK(probs[i] == 0.5);
    }
    CHECK_THROWS_AS((void)model.discriminate(3, reps.student), UsageError);
}

TEST_CASE("discriminator probabilities always respect the clamp") {
    const auto ds = small_dataset(9);
    Rng rng(9);
    models::AmidModel model(ds.meta, {8, 10}, rng);
    // Saturate with a huge output bias.
    auto params = model.discriminators().d1.parameters();
    auto bias = params.back()->values_mut();
    bias[0] = 1e4;
    const auto reps = model.embed(data::whole_split_batch(ds.meta, ds.val));
    const Tensor probs = model.discriminate(1, reps.student);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        CHECK(probs[i] >= diff::kProbEps);
        CHECK(probs[i] <= 1.0 - diff::kProbEps);
    }
}

TEST_CASE("an empty multi-set gives an empty discriminator output") {
    const auto ds = small_dataset(10);
    Rng rng(10);
    models::AmidModel model(ds.meta, {8, 10}, rng);
    const Tensor empty = Tensor::constant({0, 8}, std::vector<double>{});
    const Tensor probs = model.discriminate(2, empty);
    CHECK(probs.size() == 0);
    // and the enhanced adversarial term contributes exactly zero
    const auto reps = model.embed(data::whole_split_batch(ds.meta, ds.val));
    const Tensor with_term =
        losses::adversarial(reps.student, empty, model.discriminators(), 0.5, 0.5, 1.0);
    const Tensor without =
        losses::adversarial(reps.student, Tensor(), model.discriminators(), 0.5, 0.5, 1.0);
    CHECK(with_term.scalar_value() == without.scalar_value());
}

TEST_CASE("auxiliary pretraining helps and then freezes") {
    const auto ds = small_dataset(11, 3, 16);
    Rng rng(11);
    models::AmidModel model(ds.meta, {16, 24}, rng);
    models::pretrain_auxiliary(model, ds, 12, 8, 1e-2, 11);
    CHECK(model.auxiliary_frozen());

    // Aux-only accuracy above chance through a fresh linear probe of A.
    const auto batch = data::whole_split_batch(ds.meta, ds.test);
    const auto reps = model.embed(batch);
    // The frozen path must stay fixed under further optimizer steps.
    const auto before = snapshot(model.aux_extractor_params());
    diff::AdamOptimizer opt(model.all_params(), 1e-2);
    opt.zero_grad();
    diff::backward(diff::mean_all(diff::mul(reps.teacher, reps.teacher)));
    opt.step();
    const auto after = snapshot(model.aux_extractor_params());
    CHECK(before == after);
}

TEST_CASE("pretraining with zero epochs freezes at initialization") {
    const auto ds = small_dataset(12);
    Rng rng(12);
    models::AmidModel model(ds.meta, {8, 10}, rng);
    const auto before = snapshot(model.aux_extractor_params());
    models::pretrain_auxiliary(model, ds, 0, 8, 1e-3, 12);
    CHECK(model.auxiliary_frozen());
    CHECK(snapshot(model.aux_extractor_params()) == before);
}

TEST_CASE("checkpoint round-trip is bit exact") {
    const auto ds = small_dataset(13);
    Rng rng(13);
    models::AmidModel model(ds.meta, {8, 10}, rng);
    model.freeze_auxiliary();
    const auto path =
        (std::filesystem::temp_directory_path() / "amid_test_ckpt.json").string();
    models::save_checkpoint(model, path);
    auto loaded = models::load_checkpoint(path);

    auto a = model.all_params();
    auto b = loaded.all_params();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i]->name() == b[i]->name());
        CHECK(a[i]->trainable() == b[i]->trainable());
        const auto av = a[i]->values();
        const auto bv = b[i]->values();
        REQUIRE(av.size() == bv.size());
        for (std::size_t j = 0; j < av.size(); ++j) CHECK(av[j] == bv[j]);
    }
    // Same forward outputs, bitwise.
    const auto batch = data::whole_split_batch(ds.meta, ds.val);
    const auto ra = model.embed(batch);
    const auto rb = loaded.embed(batch);
    for (std::size_t i = 0; i < ra.teacher.size(); ++i) CHECK(ra.teacher[i] == rb.teacher[i]);
    std::filesystem::remove(path);
}

TEST_CASE("frozen teacher stops following the student extractor") {
    const auto ds = small_dataset(14);
    Rng rng(14);
    models::AmidModel model(ds.meta, {8, 10}, rng);
    model.freeze_auxiliary();
    model.freeze_teacher();
    CHECK(model.teacher_frozen());

    const auto batch = data::whole_split_batch(ds.meta, ds.val);
    const auto before = model.embed(batch);

    // Train the student path; the teacher representation must not move.
    std::vector<diff::Parameter*> student_params = model.target_extractor_params();
    for (auto* p : model.student_head_params()) student_params.push_back(p);
    diff::AdamOptimizer opt(student_params, 1e-2);
    for (int i = 0; i < 3; ++i) {
        opt.zero_grad();
        const auto reps = model.embed(batch);
        diff::backward(diff::mean_all(diff::mul(reps.student, reps.student)));
        opt.step();
    }
    const auto after = model.embed(batch);
    bool student_moved = false;
    for (std::size_t i = 0; i < before.student.size(); ++i)
        if (before.student[i] != after.student[i]) student_moved = true;
    CHECK(student_moved);
    for (std::size_t i = 0; i < before.teacher.size(); ++i)
        CHECK(before.teacher[i] == after.teacher[i]);
}
