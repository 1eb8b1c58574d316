#include <doctest.h>

#include <cmath>

#include "dada/error.hpp"
#include "dada/image_io.hpp"
#include "dada/losses.hpp"
#include "dada/model.hpp"
#include "support.hpp"

using dada::Tensor;
namespace ad = dada::ad;
namespace model = dada::model;
using testing::random_tensor;

namespace {

/// Two-stage network on 8x8 inputs: every component of the full pipeline,
/// small enough for dense finite differences in double precision.
model::ModelConfig tiny_config() {
    model::ModelConfig c;
    c.backbone_channels = {8, 64};
    c.num_classes = 4;
    c.input_height = 8;
    c.input_width = 8;
    return c;
}

std::vector<std::uint8_t> random_labels(std::size_t n, int classes, std::uint64_t seed) {
    dada::Rng rng(seed);
    std::vector<std::uint8_t> out(n);
    for (auto& l : out) l = static_cast<std::uint8_t>(rng.integer(0, classes - 1));
    return out;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("default configuration: output stride 8 and depth encoder widths") {
    const model::ModelConfig c;
    CHECK(c.output_stride() == 8);
    CHECK(c.depth_encoder_widths() == std::vector<int>{64, 16, 4, 1});
    model::ModelConfig wide;
    wide.backbone_channels = {16, 32, 64, 128};
    CHECK(wide.depth_encoder_widths() == std::vector<int>{128, 32, 8, 2});
}

TEST_CASE("configuration validation") {
    model::ModelConfig c;
    c.backbone_channels = {16, 32, 64, 96};
    CHECK_THROWS_AS(c.validate(), dada::ConfigError);
    c = {};
    c.input_height = 60;
    CHECK_THROWS_AS(c.validate(), dada::ConfigError);
    c = {};
    c.classifier_dilation = 0;
    CHECK_THROWS_AS(c.validate(), dada::ConfigError);
    c = {};
    c.num_classes = 1;
    CHECK_THROWS_AS(c.validate(), dada::ConfigError);
    CHECK_NOTHROW(model::ModelConfig{}.validate());
}

TEST_CASE("forward shapes and per-pixel probability sums") {
    const auto m = model::init_model<float>(model::ModelConfig{}, 1);
    const auto img = random_tensor({3, 64, 64}, 2, 0, 1).cast<float>();
    const auto out = model::forward(m, img, {});
    CHECK(out.seg.value().shape() == std::vector<std::int64_t>{7, 64, 64});
    CHECK(out.depth.value().shape() == std::vector<std::int64_t>{1, 64, 64});
    CHECK(out.backbone_features.value().shape() == std::vector<std::int64_t>{64, 8, 8});
    CHECK(out.depth_features.value().shape() == std::vector<std::int64_t>{64, 8, 8});
    CHECK(out.logits.value().shape() == std::vector<std::int64_t>{7, 8, 8});
    const auto& p = out.seg.value();
    double worst = 0;
    for (std::int64_t y = 0; y < 64; ++y)
        for (std::int64_t x = 0; x < 64; ++x) {
            double s = 0;
            for (std::int64_t c = 0; c < 7; ++c) {
                CHECK(p.at(c, y, x) >= 0.0f);
                s += p.at(c, y, x);
            }
            worst = std::max(worst, std::abs(s - 1.0));
        }
    CHECK(worst < 1e-6);
    for (float z : out.depth.value().storage()) CHECK(z > 0.0f);
}

TEST_CASE("forward is deterministic and rejects wrong input sizes") {
    const auto m = model::init_model<float>(model::ModelConfig{}, 3);
    const auto img = random_tensor({3, 64, 64}, 4, 0, 1).cast<float>();
    CHECK(model::forward(m, img, {}).seg.value().storage() == model::forward(m, img, {}).seg.value().storage());
    CHECK(model::init_model<float>(model::ModelConfig{}, 3).params.hash() == m.params.hash());
    CHECK(model::init_model<float>(model::ModelConfig{}, 4).params.hash() != m.params.hash());
    CHECK_THROWS_AS(model::forward(m, Tensor<float>({3, 32, 64}), {}), dada::ShapeError);
    CHECK_THROWS_AS(model::forward(m, Tensor<float>({1, 64, 64}), {}), dada::ShapeError);
}

TEST_CASE("branches are skipped when switched off") {
    const auto m = model::init_model<double>(tiny_config(), 5);
    const auto img = random_tensor({3, 8, 8}, 6, 0, 1);
    const auto plain = model::forward(m, img, {false, false, false});
    CHECK_FALSE(plain.depth.defined());
    CHECK_FALSE(plain.depth_features.defined());
    const auto depth_only = model::forward(m, img, {true, false, false});
    CHECK(depth_only.depth.defined());
    CHECK(depth_only.seg.value().storage() == plain.seg.value().storage());
}

TEST_CASE("unit depth features reproduce the plain network bit for bit") {
    const auto m = model::init_model<float>(model::ModelConfig{}, 7);
    for (std::uint64_t s = 0; s < 3; ++s) {
        const auto img = random_tensor({3, 64, 64}, 10 + s, 0, 1).cast<float>();
        const auto bypass = model::forward(m, img, {true, true, true});
        const auto plain = model::forward(m, img, {true, false, false});
        CHECK(bypass.seg.value().storage() == plain.seg.value().storage());
        CHECK(bypass.logits.value().storage() == plain.logits.value().storage());
        CHECK(bypass.depth.value().storage() == plain.depth.value().storage());
    }
}

TEST_CASE("fresh depth decoder starts near the identity") {
    const auto m = model::init_model<float>(model::ModelConfig{}, 8);
    const auto img = random_tensor({3, 64, 64}, 9, 0, 1).cast<float>();
    const auto out = model::forward(m, img, {});
    for (float v : out.depth_features.value().storage()) CHECK(std::abs(v - 1.0f) < 0.5f);
}

TEST_CASE("the gradient of sum(P) with respect to the input vanishes") {
    auto m = model::init_model<double>(tiny_config(), 11);
    ad::Var<double> x(random_tensor({3, 8, 8}, 12, 0, 1), true);
    ad::backward(ad::sum(model::forward(m, x, {}).seg));
    for (double g : x.grad().storage()) CHECK(std::abs(g) < 1e-10);
}

TEST_CASE("input gradient of a weighted output matches finite differences") {
    auto m = model::init_model<double>(tiny_config(), 13);
    ad::Var<double> x(random_tensor({3, 8, 8}, 14, 0, 1), true);
    const auto w = random_tensor({4, 8, 8}, 15);
    auto loss = [&] { return ad::dot(model::forward(m, x, {}).seg, w); };
    CHECK(testing::audit_gradient(x, loss, 100, 16) < 1e-4);
}

TEST_CASE("full pipeline parameter gradients match finite differences") {
    auto m = model::init_model<double>(tiny_config(), 17);
    const auto img = random_tensor({3, 8, 8}, 18, 0, 1);
    const auto labels = random_labels(64, 4, 19);
    const auto depth_target = random_tensor({1, 8, 8}, 20, 0.1, 1);
    auto disc = model::init_discriminator<double>({4, {8, 8, 8}, 0.2}, 21);
    auto loss = [&] {
        const auto out = model::forward(m, img, {});
        auto seg = ad::seg_nll(out.seg, labels);
        auto dep = ad::scale(ad::berhu_loss(out.depth, depth_target, 0.2), 0.5);
        auto adv = ad::scale(ad::domain_bce(model::discriminator_forward(disc, out.seg), 1), 0.01);
        return ad::add(ad::add(seg, dep), adv);
    };
    disc.params.set_requires_grad(false);
    double worst = 0;
    std::uint64_t seed = 100;
    for (auto& [name, v] : m.params.entries()) {
        const double e = testing::audit_gradient(v, loss, 12, seed++);
        CAPTURE(name);
        CHECK(e < 1e-4);
        worst = std::max(worst, e);
        m.params.zero_grad();
    }
    MESSAGE("worst model-level relative error " << worst);
}

TEST_CASE("discriminator maps 64x64 maps to 4x4 scores") {
    const auto d = model::init_discriminator<float>({7, {64, 128, 256}, 0.2}, 1);
    CHECK(d.params.size() == 8);
    CHECK(d.params["disc.0.weight"].value().shape() == std::vector<std::int64_t>{64, 7, 4, 4});
    CHECK(d.params["disc.3.weight"].value().shape() == std::vector<std::int64_t>{1, 256, 4, 4});
    const auto in = random_tensor({7, 64, 64}, 2, 0, 1).cast<float>();
    const auto s = model::discriminator_forward(d, ad::Var<float>(in));
    CHECK(s.value().shape() == std::vector<std::int64_t>{1, 4, 4});
    CHECK_THROWS_AS(model::discriminator_forward(d, ad::Var<float>(Tensor<float>({1, 64, 64}))), dada::ShapeError);
}

TEST_CASE("discriminator with zero weights scores zero") {
    auto d = model::init_discriminator<double>({3, {8, 8, 8}, 0.2}, 3);
    for (auto& [n, v] : d.params.entries()) v.mutable_value().fill(0.0);
    const auto s = model::discriminator_forward(d, ad::Var<double>(random_tensor({3, 32, 32}, 4)));
    for (double v : s.value().storage()) CHECK(v == 0.0);
}

TEST_CASE("discriminator input gradient matches finite differences") {
    const auto d = model::init_discriminator<double>({3, {8, 8, 8}, 0.2}, 5);
    ad::Var<double> x(random_tensor({3, 16, 16}, 6, 0, 1), true);
    const auto w = random_tensor({1, 1, 1}, 7);
    auto loss = [&] { return ad::dot(model::discriminator_forward(d, x), w); };
    CHECK(testing::audit_gradient(x, loss, 100, 8) < 1e-4);
}

TEST_CASE("parameter groups") {
    CHECK(model::group_of("backbone.2.weight") == model::Group::Backbone);
    CHECK(model::group_of("depth.enc2.bias") == model::Group::DepthEncoder);
    CHECK(model::group_of("depth.proj.weight") == model::Group::DepthHead);
    CHECK(model::group_of("depth.dec.weight") == model::Group::DepthDecoder);
    CHECK(model::group_of("classifier.weight") == model::Group::Classifier);
    CHECK_THROWS_AS(model::group_of("disc.0.weight"), std::invalid_argument);
}

TEST_CASE("parameter set copies are deep") {
    auto m = model::init_model<float>(model::ModelConfig{}, 9);
    auto copy = m.params.clone();
    CHECK(copy.hash() == m.params.hash());
    copy["classifier.bias"].mutable_value()[0] += 1.0f;
    CHECK(copy.hash() != m.params.hash());
}

TEST_CASE("checkpoints round trip exactly and validate shapes") {
    testing::TempDir dir("ckpt");
    auto m = model::init_model<float>(model::ModelConfig{}, 10);
    m.arch = {true, false, false};
    model::save_model(dir / "m.ckpt", m);
    const auto back = model::load_model<float>(dir / "m.ckpt");
    CHECK(back.params.hash() == m.params.hash());
    CHECK(back.config == m.config);
    CHECK(back.arch == m.arch);

    auto d = model::init_model<double>(tiny_config(), 11);
    model::save_model(dir / "d.ckpt", d);
    CHECK(model::load_model<double>(dir / "d.ckpt").params.hash() == d.params.hash());

    // A tensor whose shape disagrees with the stored config is rejected.
    nlohmann::json header;
    auto records = model::read_container(dir / "m.ckpt", header);
    for (auto& r : records)
        if (r.name == "classifier.weight") {
            r.shape = {7, 64, 3, 2};
            r.values.resize(7 * 64 * 3 * 2);
        }
    model::write_container(dir / "bad.ckpt", header, records, true);
    CHECK_THROWS_AS(model::load_model<float>(dir / "bad.ckpt"), dada::DataError);

    const std::vector<std::uint8_t> junk{'n', 'o', 'p', 'e'};
    dada::io::write_file(dir / "junk.ckpt", junk);
    CHECK_THROWS_AS(model::load_model<float>(dir / "junk.ckpt"), dada::DataError);
}

}  // TEST_SUITE
