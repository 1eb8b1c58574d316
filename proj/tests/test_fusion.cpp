#include <doctest.h>

#include <cmath>
#include <numbers>

#include "dada/autodiff.hpp"
#include "dada/error.hpp"
#include "dada/fusion.hpp"
#include "support.hpp"

using dada::Tensor;
namespace fusion = dada::fusion;
namespace ad = dada::ad;

TEST_SUITE("fusion") {

TEST_CASE("self_information examples") {
    CHECK(fusion::surprisal(1.0) == 0.0);
    CHECK(fusion::surprisal(0.0) == 0.0);
    CHECK(std::abs(fusion::surprisal(0.5) - 0.5) < 1e-9);
    const Tensor<double> p({3, 1, 1}, std::vector<double>{0.0, 0.5, 1.0});
    const auto i = fusion::self_information(p);
    CHECK(i[0] == 0.0);
    CHECK(std::abs(i[1] - 0.5) < 1e-9);
    CHECK(i[2] == 0.0);
}

TEST_CASE("base-2 surprisal peaks at p = 1/e with value 1/(e ln 2)") {
    const double peak = 1.0 / (std::numbers::e * std::numbers::ln2);
    CHECK(std::abs(fusion::surprisal(1.0 / std::numbers::e) - peak) < 1e-12);
    CHECK(peak < 0.531);
    double best = 0;
    for (int k = 0; k <= 100000; ++k) best = std::max(best, fusion::surprisal(k / 100000.0));
    CHECK(best <= peak + 1e-15);
    CHECK(best > peak - 1e-9);
}

TEST_CASE("natural-log variant is available") {
    CHECK(std::abs(fusion::surprisal(0.5, std::numbers::e) - 0.5 * std::numbers::ln2) < 1e-12);
}

TEST_CASE("dada_fusion examples") {
    const Tensor<double> i({2, 1, 1}, std::vector<double>{0.5, 0.2});
    const Tensor<double> z04({1, 1, 1}, 0.4);
    const auto f = fusion::dada_fusion(i, z04);
    CHECK(std::abs(f[0] - 0.2) < 1e-9);
    CHECK(std::abs(f[1] - 0.08) < 1e-9);

    const auto big = testing::random_tensor({4, 3, 5}, 1, 0, 0.53);
    CHECK(fusion::dada_fusion(big, Tensor<double>({1, 3, 5}, 1.0)).storage() == big.storage());
    const auto zero = fusion::dada_fusion(big, Tensor<double>({1, 3, 5}, 0.0));
    for (double v : zero.storage()) CHECK(v == 0.0);
}

TEST_CASE("dada_fusion rejects mismatched shapes") {
    CHECK_THROWS_AS(fusion::dada_fusion(Tensor<double>({2, 3, 3}), Tensor<double>({1, 3, 4})), dada::ShapeError);
    CHECK_THROWS_AS(fusion::dada_fusion(Tensor<double>({2, 3, 3}), Tensor<double>({2, 3, 3})), dada::ShapeError);
}

TEST_CASE("dada_fusion is bilinear and preserves zeros") {
    auto i = testing::random_tensor({3, 4, 4}, 2, 0, 0.53);
    auto z = testing::random_tensor({1, 4, 4}, 3, 0, 1);
    i[5] = 0;
    z[7] = 0;
    const auto base = fusion::dada_fusion(i, z);
    for (double a : {0.0, 0.5, 2.0}) {
        Tensor<double> ai = i, az = z;
        for (auto& v : ai.storage()) v *= a;
        for (auto& v : az.storage()) v *= a;
        const auto fi = fusion::dada_fusion(ai, z), fz = fusion::dada_fusion(i, az);
        for (std::size_t k = 0; k < base.size(); ++k) {
            CHECK(std::abs(fi[k] - a * base[k]) < 1e-15);
            CHECK(std::abs(fz[k] - a * base[k]) < 1e-15);
        }
    }
    CHECK(base[5] == 0.0);
    for (std::int64_t c = 0; c < 3; ++c) CHECK(base[static_cast<std::size_t>(c * 16 + 7)] == 0.0);
}

TEST_CASE("depth-aware map is bounded by the surprisal map for Z in [0,1]") {
    auto p = testing::random_tensor({5, 6, 6}, 4, 0, 1);
    const auto i = fusion::self_information(p);
    const auto z = testing::random_tensor({1, 6, 6}, 5, 0, 1);
    const auto f = fusion::dada_fusion(i, z);
    for (std::size_t k = 0; k < f.size(); ++k) {
        CHECK(f[k] >= 0.0);
        CHECK(f[k] <= i[k]);
    }
}

TEST_CASE("analytic gradients of both ops match finite differences") {
    auto p = ad::Var<double>(testing::random_tensor({3, 4, 4}, 6, 1e-6, 1), true);
    auto z = ad::Var<double>(testing::random_tensor({1, 4, 4}, 7, 0, 1), true);
    const auto w = testing::random_tensor({3, 4, 4}, 8);
    auto loss = [&] { return ad::dot(ad::mul_broadcast_channels(ad::self_information(p, 2.0), z), w); };
    auto near_zero = [&](std::size_t k) { return p.value()[k] < 1e-6 + 1e-6; };
    CHECK(testing::audit_gradient(p, loss, 100, 9, 1e-8, near_zero) < 1e-5);
    CHECK(testing::audit_gradient(z, loss, 100, 10, 1e-7) < 1e-5);
    // Values agree with the reference transforms.
    const auto ref = fusion::dada_fusion(fusion::self_information(p.value()), z.value());
    const auto got = ad::mul_broadcast_channels(ad::self_information(p, 2.0), z).value();
    for (std::size_t k = 0; k < ref.size(); ++k) CHECK(std::abs(ref[k] - got[k]) < 1e-15);
}

}  // TEST_SUITE
