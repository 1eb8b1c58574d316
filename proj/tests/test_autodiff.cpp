#include <doctest.h>

#include "dada/autodiff.hpp"
#include "dada/error.hpp"
#include "dada/losses.hpp"
#include "support.hpp"

using dada::Tensor;
using dada::ad::Var;
namespace ad = dada::ad;
using testing::audit_gradient;
using testing::random_tensor;

namespace {

constexpr int kProbes = 100;
constexpr double kOpTol = 1e-4;

Var<double> param(Tensor<double> t) { return Var<double>(std::move(t), true); }

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("sum of a parameter tensor has a gradient of ones") {
    auto p = param(random_tensor({2, 3, 4}, 1));
    ad::backward(ad::sum(p));
    REQUIRE(p.has_grad());
    for (double g : p.grad().storage()) CHECK(g == 1.0);
}

TEST_CASE("berhu loss over a vector matches central differences") {
    // No residual sits on a kink; index 6 sets the threshold.
    Tensor<double> pred({1, 1, 12}), target({1, 1, 12});
    const double residuals[12] = {0.03, -0.05, 0.08, 0.35, -0.42, 0.5, -1.0, 0.11, -0.27, 0.61, -0.07, 0.9};
    for (int i = 0; i < 12; ++i) {
        target[i] = 0.3 + 0.01 * i;
        pred[i] = target[i] + residuals[i];
    }
    auto p = param(pred);
    auto loss = [&] { return ad::berhu_loss(p, target, 0.2); };
    ad::backward(loss());
    const auto analytic = p.grad();
    for (std::size_t i = 0; i < 12; ++i) {
        const double num = testing::central_difference([&] { return loss().value()[0]; }, p.mutable_value()[i], 1e-7);
        CHECK(testing::rel_err(analytic[i], num) < 1e-6);
    }
}

TEST_CASE("gradients do not flow through a detached branch") {
    auto p = param(random_tensor({1, 2, 2}, 2));
    auto d = ad::mul(p, p).detach();
    CHECK(d.value().storage() == ad::mul(p, p).value().storage());
    auto loss = ad::sum(ad::add(d, ad::scale(d, 3.0)));
    ad::backward(loss);
    CHECK_FALSE(p.has_grad());

    auto mixed = ad::sum(ad::add(ad::mul(p, d), p));
    ad::backward(mixed);
    for (std::size_t i = 0; i < p.value().size(); ++i) CHECK(p.grad()[i] == doctest::Approx(d.value()[i] + 1.0));
}

TEST_CASE("detach keeps data and severs the graph") {
    auto p = param(random_tensor({3, 2, 2}, 3));
    auto y = ad::softplus(p);
    auto d = y.detach();
    CHECK(d.value().storage() == y.value().storage());
    CHECK_FALSE(d.requires_grad());
    CHECK(d.node()->parents.empty());
}

TEST_CASE("repeated backward calls accumulate leaf gradients") {
    auto p = param(random_tensor({1, 3, 3}, 4));
    ad::backward(ad::sum(ad::scale(p, 2.0)));
    ad::backward(ad::sum(ad::scale(p, 5.0)));
    for (double g : p.grad().storage()) CHECK(g == 7.0);
}

TEST_CASE("accumulation is exactly reproducible") {
    auto run = [] {
        auto p = param(random_tensor({2, 4, 4}, 5));
        auto w = param(random_tensor({3, 2, 3, 3}, 6));
        auto b = param(random_tensor({3}, 7));
        auto y = ad::conv2d(p, w, b, {1, 1, 1});
        ad::backward(ad::dot(ad::softmax_channels(y), random_tensor({3, 4, 4}, 8)));
        ad::backward(ad::sum(ad::relu(y)));
        return std::make_pair(p.grad().storage(), w.grad().storage());
    };
    CHECK(run() == run());
}

TEST_CASE("backward rejects non-finite and non-scalar losses") {
    auto p = param(Tensor<double>({1}, std::nan("")));
    CHECK_THROWS_AS(ad::backward(ad::sum(p)), dada::NumericError);
    auto q = param(random_tensor({1, 2, 2}, 9));
    CHECK_THROWS_AS(ad::backward(q), dada::ShapeError);
}

TEST_CASE("randomized finite-difference audit of every op") {
    const auto w = random_tensor({2, 5, 6}, 10);
    std::uint64_t seed = 100;

    SUBCASE("add, mul, scale, mean") {
        auto a = param(random_tensor({2, 5, 6}, 11));
        auto b = param(random_tensor({2, 5, 6}, 12));
        auto f = [&] { return ad::dot(ad::add(ad::mul(a, b), ad::scale(a, 0.7)), w); };
        CHECK(audit_gradient(a, f, kProbes, seed++) < kOpTol);
        CHECK(audit_gradient(b, f, kProbes, seed++) < kOpTol);
        auto g = [&] { return ad::mean(ad::mul(a, a)); };
        CHECK(audit_gradient(a, g, kProbes, seed++) < kOpTol);
    }
    SUBCASE("mul_broadcast_channels") {
        auto x = param(random_tensor({2, 5, 6}, 13));
        auto z = param(random_tensor({1, 5, 6}, 14, 0, 1));
        auto f = [&] { return ad::dot(ad::mul_broadcast_channels(x, z), w); };
        CHECK(audit_gradient(x, f, kProbes, seed++) < kOpTol);
        CHECK(audit_gradient(z, f, kProbes, seed++) < kOpTol);
    }
    SUBCASE("conv2d over several geometries") {
        struct Case {
            int cin, cout, k;
            ad::ConvGeometry g;
            int h, wd;
        };
        const Case cases[] = {{3, 4, 3, {1, 1, 1}, 6, 5}, {2, 3, 3, {2, 1, 1}, 7, 8}, {4, 2, 1, {1, 0, 1}, 5, 5},
                              {3, 2, 3, {1, 2, 2}, 6, 6}, {2, 3, 4, {2, 1, 1}, 8, 8}};
        for (const auto& c : cases) {
            auto x = param(random_tensor({c.cin, c.h, c.wd}, seed++));
            auto k = param(random_tensor({c.cout, c.cin, c.k, c.k}, seed++));
            auto b = param(random_tensor({c.cout}, seed++));
            const auto ho = ad::conv_out_size(c.h, c.k, c.g), wo = ad::conv_out_size(c.wd, c.k, c.g);
            const auto ow = random_tensor({c.cout, ho, wo}, seed++);
            auto f = [&] { return ad::dot(ad::conv2d(x, k, b, c.g), ow); };
            CHECK(audit_gradient(x, f, kProbes, seed++) < kOpTol);
            CHECK(audit_gradient(k, f, kProbes, seed++) < kOpTol);
            CHECK(audit_gradient(b, f, kProbes, seed++) < kOpTol);
        }
    }
    SUBCASE("relu and leaky relu away from zero") {
        auto x = param(random_tensor({2, 5, 6}, 15));
        auto away = [&](std::size_t i) { return std::abs(x.value()[i]) < 1e-3; };
        auto f = [&] { return ad::dot(ad::relu(x), w); };
        CHECK(audit_gradient(x, f, kProbes, seed++, 1e-6, away) < kOpTol);
        auto g = [&] { return ad::dot(ad::leaky_relu(x, 0.2), w); };
        CHECK(audit_gradient(x, g, kProbes, seed++, 1e-6, away) < kOpTol);
    }
    SUBCASE("softplus") {
        auto x = param(random_tensor({2, 5, 6}, 16, -4, 4));
        auto f = [&] { return ad::dot(ad::softplus(x), w); };
        CHECK(audit_gradient(x, f, kProbes, seed++) < kOpTol);
    }
    SUBCASE("softmax over channels") {
        auto x = param(random_tensor({2, 5, 6}, 17, -3, 3));
        auto f = [&] { return ad::dot(ad::softmax_channels(x), w); };
        CHECK(audit_gradient(x, f, kProbes, seed++) < kOpTol);
    }
    SUBCASE("3x3 average pooling") {
        auto x = param(random_tensor({2, 5, 6}, 18));
        auto f = [&] { return ad::dot(ad::avg_pool3x3(x), w); };
        CHECK(audit_gradient(x, f, kProbes, seed++) < kOpTol);
    }
    SUBCASE("bilinear upsampling") {
        auto x = param(random_tensor({2, 3, 4}, 19));
        const auto ow = random_tensor({2, 11, 13}, 20);
        auto f = [&] { return ad::dot(ad::upsample_bilinear(x, 11, 13), ow); };
        CHECK(audit_gradient(x, f, kProbes, seed++) < kOpTol);
    }
    SUBCASE("self-information, natural and base 2") {
        auto p = param(random_tensor({2, 5, 6}, 21, 1e-3, 1.0));
        auto f = [&] { return ad::dot(ad::self_information(p, 2.0), w); };
        CHECK(audit_gradient(p, f, kProbes, seed++, 1e-7) < kOpTol);
        auto g = [&] { return ad::dot(ad::self_information(p, std::exp(1.0)), w); };
        CHECK(audit_gradient(p, g, kProbes, seed++, 1e-7) < kOpTol);
    }
    SUBCASE("seg nll") {
        auto p = param(random_tensor({3, 4, 5}, 22, 0.05, 1.0));
        std::vector<std::uint8_t> labels(20);
        dada::Rng rng(23);
        for (auto& l : labels) l = static_cast<std::uint8_t>(rng.integer(0, 2));
        auto f = [&] { return ad::seg_nll(p, labels); };
        CHECK(audit_gradient(p, f, kProbes, seed++, 1e-7) < kOpTol);
    }
    SUBCASE("berhu loss") {
        const auto target = random_tensor({1, 6, 6}, 24, 0, 1);
        auto pred = param(random_tensor({1, 6, 6}, 25, 0, 1));
        const double c = dada::losses::berhu_threshold(pred.value(), target, 0.2);
        auto near_kink = [&](std::size_t i) {
            const double e = std::abs(pred.value()[i] - target[i]);
            return e < 1e-4 || std::abs(e - c) < 1e-4;
        };
        auto f = [&] { return ad::berhu_loss(pred, target, 0.2); };
        CHECK(audit_gradient(pred, f, kProbes, seed++, 1e-7, near_kink) < kOpTol);
    }
    SUBCASE("domain bce for both labels") {
        auto s = param(random_tensor({1, 4, 4}, 26, -5, 5));
        for (int label : {0, 1}) {
            auto f = [&] { return ad::domain_bce(s, label); };
            CHECK(audit_gradient(s, f, kProbes, seed++) < kOpTol);
        }
    }
}

}  // TEST_SUITE
