// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "matdiff/errors.hpp"
#include "matdiff/models.hpp"
#include "matdiff/pipeline.hpp"
#include "matdiff/schedule.hpp"
#include "test_util.hpp"

using namespace matdiff;
using matdiff::test_support::bitwise_equal;

TEST(MakeSchedule, SingleStepEndpoints) {
    for (auto kind : {BaseSchedule::linear_beta, BaseSchedule::cosine}) {
        const auto s = make_schedule(1, kind);
        ASSERT_EQ(s.alpha_bar.size(), 2u);
        EXPECT_EQ(s.alpha_bar[0], 1.0);
        EXPECT_EQ(s.alpha_bar[1], 0.0);
    }
}

TEST(MakeSchedule, CosineThousandEndpoints) {
    const auto s = make_schedule(1000, BaseSchedule::cosine);
    ASSERT_EQ(s.alpha_bar.size(), 1001u);
    EXPECT_EQ(s.alpha_bar[1000], 0.0);
    EXPECT_GE(s.alpha_bar[0], 1.0 - 1e-6);
}

TEST(MakeSchedule, LinearTenStrictlyDecreasing) {
    const auto s = make_schedule(10, BaseSchedule::linear_beta);
    ASSERT_EQ(s.alpha_bar.size(), 11u);
    for (size_t i = 1; i < s.alpha_bar.size(); ++i) {
        EXPECT_LT(s.alpha_bar[i], s.alpha_bar[i - 1]) << "at t=" << i;
    }
}

TEST(MakeSchedule, InvariantsAcrossSizes) {
    for (auto kind : {BaseSchedule::linear_beta, BaseSchedule::cosine}) {
        for (int64_t T : {2, 7, 100, 1000}) {
            const auto s = make_schedule(T, kind);
            EXPECT_EQ(s.T, T);
            EXPECT_EQ(s.alpha_bar.back(), 0.0);
            EXPECT_GE(s.alpha_bar.front(), 1.0 - 1e-6);
            for (size_t i = 0; i < s.alpha_bar.size(); ++i) {
                EXPECT_GE(s.alpha_bar[i], 0.0);
                EXPECT_LE(s.alpha_bar[i], 1.0);
                if (i > 0) {
                    EXPECT_LE(s.alpha_bar[i], s.alpha_bar[i - 1]);
                }
            }
        }
    }
}

TEST(MakeSchedule, RejectsNonPositiveT) {
    EXPECT_THROW(make_schedule(0, BaseSchedule::linear_beta), InvalidArgument);
    EXPECT_THROW(make_schedule(-3, BaseSchedule::cosine), InvalidArgument);
}

TEST(MakeSchedule, BaseNames) {
    EXPECT_EQ(base_schedule_from_string(to_string(BaseSchedule::cosine)), BaseSchedule::cosine);
    EXPECT_EQ(base_schedule_from_string(to_string(BaseSchedule::linear_beta)), BaseSchedule::linear_beta);
    EXPECT_THROW(base_schedule_from_string("sigmoid"), InvalidArgument);
}

class VAlgebra : public ::testing::Test {
  protected:
    void SetUp() override { torch::manual_seed(3); }
    NoiseSchedule s = make_schedule(1000, BaseSchedule::linear_beta);
    torch::Tensor z0 = torch::randn({2, 3, 4, 4, 4});
    torch::Tensor eps = torch::randn({2, 3, 4, 4, 4});
};

TEST_F(VAlgebra, AddNoiseTerminalIsEpsBitwise) {
    EXPECT_TRUE(bitwise_equal(add_noise(z0, eps, s.T, s), eps));
}

TEST_F(VAlgebra, AddNoiseZeroIsSignal) {
    ASSERT_EQ(s.alpha_bar[0], 1.0);
    EXPECT_TRUE(bitwise_equal(add_noise(z0, eps, 0, s), z0));
}

TEST_F(VAlgebra, AddNoiseMatchesScalarRecomputation) {
    const int64_t t = s.T / 2;
    const auto out = add_noise(z0, eps, t, s).flatten();
    const auto a = z0.flatten();
    const auto e = eps.flatten();
    const double ab = s.alpha_bar[static_cast<size_t>(t)];
    for (int64_t i = 0; i < out.numel(); ++i) {
        const double expect = std::sqrt(ab) * a[i].item<double>() + std::sqrt(1.0 - ab) * e[i].item<double>();
        EXPECT_NEAR(out[i].item<double>(), expect, 1e-6);
    }
}

TEST_F(VAlgebra, VTargetTerminalIsNegatedSignal) {
    EXPECT_TRUE(bitwise_equal(v_target(z0, eps, s.T, s), -z0));
}

TEST_F(VAlgebra, VTargetZeroIsEps) {
    EXPECT_TRUE(bitwise_equal(v_target(z0, eps, 0, s), eps));
}

TEST_F(VAlgebra, RoundTripAllTimesteps) {
    for (int64_t t = 0; t <= s.T; t += 37) {
        const auto zt = add_noise(z0, eps, t, s);
        const auto v = v_target(z0, eps, t, s);
        EXPECT_LE((z0_from_v(zt, v, t, s) - z0).abs().max().item<double>(), 1e-5) << "t=" << t;
        EXPECT_LE((eps_from_v(zt, v, t, s) - eps).abs().max().item<double>(), 1e-5) << "t=" << t;
    }
}

TEST_F(VAlgebra, Z0FromVTerminalAndZero) {
    EXPECT_TRUE(bitwise_equal(z0_from_v(eps, -z0, s.T, s), z0));
    const auto zeros = torch::zeros_like(z0);
    EXPECT_TRUE(bitwise_equal(z0_from_v(zeros, zeros, s.T / 3, s), zeros));
}

TEST_F(VAlgebra, Linearity) {
    const double a = -2.5;
    for (int64_t t : {int64_t{0}, int64_t{250}, int64_t{999}, s.T}) {
        EXPECT_TRUE(torch::allclose(add_noise(z0 * a, eps * a, t, s), add_noise(z0, eps, t, s) * a, 1e-5, 1e-5));
        EXPECT_TRUE(torch::allclose(v_target(z0 * a, eps * a, t, s), v_target(z0, eps, t, s) * a, 1e-5, 1e-5));
    }
}

TEST_F(VAlgebra, Errors) {
    EXPECT_THROW(add_noise(z0, eps, -1, s), InvalidArgument);
    EXPECT_THROW(v_target(z0, eps, s.T + 1, s), InvalidArgument);
    EXPECT_THROW(z0_from_v(z0, eps.narrow(0, 0, 1), 5, s), InvalidArgument);
    EXPECT_THROW(add_noise(z0, torch::randn({3}), 5, s), InvalidArgument);
}

TEST(OneStepPredict, IsNegatedDenoiserOutputAndDeterministic) {
    torch::NoGradGuard no_grad;
    auto bundle = ModelBundle::create(test_support::tiny_config(), 1);
    bundle.set_eval();
    const auto eps = torch::randn({2, 2, 4, 8, 8});
    const auto zc = torch::randn({2, 4, 8, 8});
    const auto a = one_step_predict(eps, zc, bundle.denoiser, all_tasks());
    const auto b = one_step_predict(eps, zc, bundle.denoiser, all_tasks());
    EXPECT_TRUE(bitwise_equal(a, b));
    const auto raw = bundle.denoiser->forward(eps, zc, bundle.denoiser->terminal_step(), all_tasks());
    EXPECT_TRUE(bitwise_equal(a, -raw));
}

TEST(OneStepPredict, ZeroDenoiserGivesZero) {
    torch::NoGradGuard no_grad;
    auto bundle = ModelBundle::create(test_support::tiny_config(), 1);
    for (auto& p : bundle.denoiser->parameters()) {
        p.zero_();
    }
    const auto out = one_step_predict(torch::randn({2, 1, 4, 8, 8}), torch::randn({1, 4, 8, 8}),
                                      bundle.denoiser, all_tasks());
    EXPECT_EQ(out.abs().max().item<double>(), 0.0);
}

TEST(OneStepPredict, ShapeMismatch) {
    auto bundle = ModelBundle::create(test_support::tiny_config(), 1);
    EXPECT_THROW(one_step_predict(torch::randn({2, 2, 4, 8, 8}), torch::randn({3, 4, 8, 8}), bundle.denoiser,
                                  all_tasks()),
                 InvalidArgument);
    EXPECT_THROW(one_step_predict(torch::randn({2, 2, 4, 8, 8}), torch::randn({2, 4, 4, 4}), bundle.denoiser,
                                  all_tasks()),
                 InvalidArgument);
}
