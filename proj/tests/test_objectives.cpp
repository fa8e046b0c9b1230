// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "matdiff/errors.hpp"
#include "matdiff/objectives.hpp"

using namespace matdiff;

namespace {

double naive_mse(const torch::Tensor& p, const torch::Tensor& g, const torch::Tensor* mask) {
    const auto pa = p.accessor<double, 3>();
    const auto ga = g.accessor<double, 3>();
    double sum = 0.0;
    double count = 0.0;
    for (int64_t c = 0; c < p.size(0); ++c) {
        for (int64_t y = 0; y < p.size(1); ++y) {
            for (int64_t x = 0; x < p.size(2); ++x) {
                if (mask != nullptr && (*mask)[0][y][x].item<double>() == 0.0) {
                    continue;
                }
                const double d = pa[c][y][x] - ga[c][y][x];
                sum += d * d;
                count += 1.0;
            }
        }
    }
    return sum / count;
}

double naive_gm(const torch::Tensor& p, const torch::Tensor& g) {
    const auto pa = p.accessor<double, 3>();
    const auto ga = g.accessor<double, 3>();
    const int64_t C = p.size(0), H = p.size(1), W = p.size(2);
    double sum = 0.0;
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t y = 0; y < H; ++y) {
            for (int64_t x = 0; x < W; ++x) {
                const double d = pa[c][y][x] - ga[c][y][x];
                if (x + 1 < W) {
                    sum += std::abs(pa[c][y][x + 1] - ga[c][y][x + 1] - d);
                }
                if (y + 1 < H) {
                    sum += std::abs(pa[c][y + 1][x] - ga[c][y + 1][x] - d);
                }
            }
        }
    }
    return sum / static_cast<double>(H * W);
}

const auto kDouble = torch::TensorOptions().dtype(torch::kFloat64);

} // namespace

TEST(MseLoss, IdenticalIsZero) {
    const auto a = torch::rand({3, 5, 5});
    EXPECT_EQ(matdiff::mse_loss(a, a).item<double>(), 0.0);
}

TEST(MseLoss, ConstantOffset) {
    const auto a = torch::rand({3, 6, 6}, kDouble);
    EXPECT_NEAR(matdiff::mse_loss(a + 0.5, a).item<double>(), 0.25, 1e-12);
}

TEST(MseLoss, MatchesNaiveLoop) {
    torch::manual_seed(1);
    for (int i = 0; i < 5; ++i) {
        const auto p = torch::rand({3, 4, 4}, kDouble);
        const auto g = torch::rand({3, 4, 4}, kDouble);
        EXPECT_NEAR(matdiff::mse_loss(p, g).item<double>(), naive_mse(p, g, nullptr), 1e-12);
        auto m = (torch::rand({1, 4, 4}) > 0.4).to(torch::kFloat64);
        m[0][0][0] = 1.0;
        EXPECT_NEAR(matdiff::mse_loss(p, g, m).item<double>(), naive_mse(p, g, &m), 1e-12);
    }
}

TEST(MseLoss, BatchedEqualsPooledMean) {
    const auto p = torch::rand({2, 3, 4, 4}, kDouble);
    const auto g = torch::rand({2, 3, 4, 4}, kDouble);
    const double expect = (naive_mse(p[0], g[0], nullptr) + naive_mse(p[1], g[1], nullptr)) / 2.0;
    EXPECT_NEAR(matdiff::mse_loss(p, g).item<double>(), expect, 1e-12);
}

TEST(MseLoss, Errors) {
    const auto a = torch::rand({3, 4, 4});
    EXPECT_THROW(matdiff::mse_loss(a, torch::rand({3, 4, 5})), InvalidArgument);
    EXPECT_THROW(matdiff::mse_loss(a, a, torch::zeros({1, 4, 4})), InvalidArgument);
}

TEST(GmLoss, HandExample) {
    const auto pred = torch::tensor({0.0, 1.0, 0.0, 1.0}, kDouble).view({1, 2, 2});
    const auto target = torch::zeros({1, 2, 2}, kDouble);
    EXPECT_DOUBLE_EQ(gm_loss(pred, target).item<double>(), 0.5);
}

TEST(GmLoss, MatchesBruteForce) {
    torch::manual_seed(2);
    for (int i = 0; i < 20; ++i) {
        const int64_t h = torch::randint(2, 9, {1}).item<int64_t>();
        const int64_t w = torch::randint(2, 9, {1}).item<int64_t>();
        const int64_t c = torch::randint(1, 4, {1}).item<int64_t>();
        const auto p = torch::rand({c, h, w}, kDouble);
        const auto g = torch::rand({c, h, w}, kDouble);
        EXPECT_NEAR(gm_loss(p, g).item<double>(), naive_gm(p, g), 1e-12);
    }
}

TEST(GmLoss, ConstantShiftIsZero) {
    torch::manual_seed(4);
    for (int i = 0; i < 50; ++i) {
        const auto x = torch::rand({3, 8, 8}, kDouble);
        const double c = torch::randn({1}, kDouble).item<double>();
        EXPECT_LE(gm_loss(x, x + c).item<double>(), 1e-12);
    }
}

TEST(GmLoss, SharedOffsetInvariance) {
    const auto a = torch::rand({3, 7, 5}, kDouble);
    const auto b = torch::rand({3, 7, 5}, kDouble);
    const auto s = torch::rand({3, 7, 5}, kDouble);
    EXPECT_NEAR(gm_loss(a + s, b + s).item<double>(), gm_loss(a, b).item<double>(), 1e-12);
}

TEST(GmLoss, MaskedCountsInteriorPairsOnly) {
    // Only the left column is foreground: the vertical pair inside it counts, horizontal pairs do not.
    const auto pred = torch::tensor({0.0, 5.0, 1.0, 7.0}, kDouble).view({1, 2, 2});
    const auto target = torch::zeros({1, 2, 2}, kDouble);
    const auto mask = torch::tensor({1.0, 0.0, 1.0, 0.0}, kDouble).view({1, 2, 2});
    EXPECT_DOUBLE_EQ(gm_loss(pred, target, mask).item<double>(), 1.0 / 2.0);
}

TEST(GmLoss, Errors) {
    EXPECT_THROW(gm_loss(torch::rand({1, 1, 4}), torch::rand({1, 1, 4})), InvalidArgument);
    EXPECT_THROW(gm_loss(torch::rand({1, 4, 1}), torch::rand({1, 4, 1})), InvalidArgument);
    EXPECT_THROW(gm_loss(torch::rand({1, 4, 4}), torch::rand({1, 4, 3})), InvalidArgument);
}

TEST(GmLoss, SubgradientMatchesFiniteDifferences) {
    torch::manual_seed(5);
    const auto target = torch::rand({2, 6, 6}, kDouble);
    auto pred = torch::rand({2, 6, 6}, kDouble).requires_grad_(true);
    const auto loss = gm_loss(pred, target);
    loss.backward();
    const auto grad = pred.grad().clone();

    torch::NoGradGuard no_grad;
    const auto base = pred.detach();
    const auto residual = base - target;
    auto min_kink = [](const torch::Tensor& d) {
        const auto dx = (d.narrow(2, 1, d.size(2) - 1) - d.narrow(2, 0, d.size(2) - 1)).abs().min();
        const auto dy = (d.narrow(1, 1, d.size(1) - 1) - d.narrow(1, 0, d.size(1) - 1)).abs().min();
        return std::min(dx.item<double>(), dy.item<double>());
    };
    ASSERT_GT(min_kink(residual), 1e-6);
    const double h = std::min(1e-7, min_kink(residual) / 4.0);
    for (int probe = 0; probe < 10; ++probe) {
        const auto dir = torch::randn_like(base);
        const double fd = (gm_loss(base + h * dir, target).item<double>() -
                           gm_loss(base - h * dir, target).item<double>()) /
                          (2.0 * h);
        const double ad = (grad * dir).sum().item<double>();
        EXPECT_LE(std::abs(fd - ad), 1e-3 * std::max(std::abs(ad), 1e-8));
    }
}

TEST(TotalLoss, PerfectPredictionIsZero) {
    const auto a = torch::rand({3, 8, 8});
    const auto rm = torch::rand({3, 8, 8});
    const auto l = total_loss(a, a, rm, rm);
    EXPECT_EQ(l.total.item<double>(), 0.0);
}

TEST(TotalLoss, AlbedoOffsetIsolated) {
    const auto a = torch::rand({3, 8, 8}, kDouble);
    const auto rm = torch::rand({3, 8, 8}, kDouble);
    const auto l = total_loss(a + 0.1, a, rm, rm);
    EXPECT_NEAR(l.total.item<double>(), 0.01, 1e-12);
    EXPECT_EQ(l.gm_rm.item<double>(), 0.0);
    EXPECT_EQ(l.mse_rm.item<double>(), 0.0);
}

TEST(TotalLoss, DecompositionIdentity) {
    torch::manual_seed(6);
    const auto pa = torch::rand({2, 3, 8, 8}, kDouble), ga = torch::rand({2, 3, 8, 8}, kDouble);
    const auto pr = torch::rand({2, 3, 8, 8}, kDouble), gr = torch::rand({2, 3, 8, 8}, kDouble);
    const auto l = total_loss(pa, ga, pr, gr);
    const double a = matdiff::mse_loss(pa, ga).item<double>();
    const double r = matdiff::mse_loss(pr, gr).item<double>();
    const double g = gm_loss(pr, gr).item<double>();
    EXPECT_DOUBLE_EQ(l.mse_albedo.item<double>(), a);
    EXPECT_DOUBLE_EQ(l.mse_rm.item<double>(), r);
    EXPECT_DOUBLE_EQ(l.gm_rm.item<double>(), g);
    EXPECT_DOUBLE_EQ(l.total.item<double>(), a + r + g);

    const auto no_gm = total_loss(pa, ga, pr, gr, std::nullopt, LossWeights{false});
    EXPECT_DOUBLE_EQ(no_gm.total.item<double>(), a + r);
}

TEST(TotalLoss, NanNamesComponent) {
    auto a = torch::rand({3, 8, 8});
    auto rm = torch::rand({3, 8, 8});
    auto bad_a = a.clone();
    bad_a[0][1][1] = std::numeric_limits<float>::quiet_NaN();
    try {
        total_loss(bad_a, a, rm, rm);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_EQ(e.component(), "mse_albedo");
    }
    auto bad_rm = rm.clone();
    bad_rm[2][3][3] = std::numeric_limits<float>::infinity();
    try {
        total_loss(a, a, rm, bad_rm);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_EQ(e.component(), "mse_rm");
    }
}
