#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <unistd.h>
#include <vector>

#include "dada/autodiff.hpp"
#include "dada/rng.hpp"

namespace testing {

namespace fs = std::filesystem;

/// Unique scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "dada") {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps near-zero derivatives
/// from turning round-off into large relative errors.
inline double rel_err(double analytic, double numeric, double floor = 1e-4) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double central_difference(const std::function<double()>& f, double& x, double h) {
    const double x0 = x;
    x = x0 + h;
    const double fp = f();
    x = x0 - h;
    const double fm = f();
    x = x0;
    return (fp - fm) / (2 * h);
}

/// Randomly probes entries of `v` (a leaf requiring grad) and compares the
/// analytic gradient of `loss()` with central differences. Returns the
/// largest relative error.
inline double audit_gradient(dada::ad::Var<double>& v, const std::function<dada::ad::Var<double>()>& loss,
                             int probes, std::uint64_t seed, double h = 1e-6,
                             const std::function<bool(std::size_t)>& skip = {}) {
    v.set_requires_grad(true);
    v.zero_grad();
    dada::ad::backward(loss());
    const auto analytic = v.grad();
    dada::Rng rng(seed);
    double worst = 0;
    auto& x = v.mutable_value();
    for (int p = 0; p < probes; ++p) {
        const auto i = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(x.size()) - 1));
        if (skip && skip(i)) continue;
        const double num = central_difference([&] { return loss().value()[0]; }, x[i], h);
        worst = std::max(worst, rel_err(analytic[i], num));
    }
    return worst;
}

inline dada::Tensor<double> random_tensor(std::vector<std::int64_t> shape, std::uint64_t seed, double lo = -1,
                                          double hi = 1) {
    dada::Tensor<double> t(std::move(shape));
    dada::Rng rng(seed);
    for (auto& v : t.storage()) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace testing
