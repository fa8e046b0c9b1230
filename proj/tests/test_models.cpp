// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>

#include <gtest/gtest.h>
#include <json.hpp>
#include <torch/torch.h>

#include "matdiff/errors.hpp"
#include "matdiff/image.hpp"
#include "matdiff/models.hpp"
#include "matdiff/pipeline.hpp"
#include "test_util.hpp"

using namespace matdiff;
using test_support::bitwise_equal;
using test_support::tiny_config;
using test_support::gradient_check;
using test_support::randomize_din_output;


TEST(Autoencoder, FactorEightShapes) {
    torch::NoGradGuard no_grad;
    auto b = ModelBundle::create(tiny_config(), 0);
    const auto x = torch::rand({2, 3, 64, 64});
    const auto z = b.autoencoder->encode(x);
    EXPECT_EQ(z.sizes(), (std::vector<int64_t>{2, 4, 8, 8}));
    const auto y = b.autoencoder->decode(z);
    EXPECT_EQ(y.sizes(), x.sizes());
    EXPECT_GE(y.min().item<double>(), -1.0);
    EXPECT_LE(y.max().item<double>(), 2.0);
    EXPECT_THROW(b.autoencoder->encode(torch::rand({1, 3, 60, 64})), InvalidArgument);
    EXPECT_THROW(b.autoencoder->encode(torch::rand({1, 4, 64, 64})), InvalidArgument);
}

TEST(Autoencoder, DecodeClampsToBoundedRange) {
    torch::NoGradGuard no_grad;
    auto b = ModelBundle::create(tiny_config(), 0);
    const auto y = b.autoencoder->decode(torch::randn({1, 4, 4, 4}) * 1e4);
    EXPECT_GE(y.min().item<double>(), -1.0);
    EXPECT_LE(y.max().item<double>(), 2.0);
}

TEST(Autoencoder, ViewsEncodedIndependently) {
    torch::NoGradGuard no_grad;
    auto b = ModelBundle::create(tiny_config(), 0);
    b.set_eval();
    const auto x = torch::rand({3, 3, 32, 32});
    const auto batched = b.autoencoder->encode(x);
    for (int64_t v = 0; v < 3; ++v) {
        const auto single = b.autoencoder->encode(x.narrow(0, v, 1));
        EXPECT_LE((batched.narrow(0, v, 1) - single).abs().max().item<double>(), 1e-5);
    }
}

TEST(Autoencoder, TapsPairWithDecoderSites) {
    torch::NoGradGuard no_grad;
    auto b = ModelBundle::create(tiny_config(), 0);
    const auto x = torch::rand({1, 3, 32, 32});
    const auto taps = b.autoencoder->encoder_taps(x);
    std::vector<torch::Tensor> dec(2);
    b.autoencoder->decode_hooked(b.autoencoder->encode(x), [&](int site, const torch::Tensor& f) {
        dec[static_cast<size_t>(site)] = f;
        return f;
    });
    for (int site = 0; site < 2; ++site) {
        const auto& enc = taps[static_cast<size_t>(DetailInjectorImpl::encoder_tap_for_site(site))];
        EXPECT_EQ(enc.size(2), dec[static_cast<size_t>(site)].size(2));
        EXPECT_EQ(enc.size(3), dec[static_cast<size_t>(site)].size(3));
    }
    // The injection sites are the two full-resolution decoder features.
    EXPECT_EQ(dec[0].size(2), 32);
    EXPECT_EQ(dec[1].size(2), 32);
}

TEST(Autoencoder, LearnsFlatColors) {
    torch::manual_seed(0);
    auto b = ModelBundle::create(ModelConfig{}, 0);
    auto& ae = b.autoencoder;
    auto make = [](int64_t n) { return torch::rand({n, 3, 1, 1}).expand({n, 3, 16, 16}).contiguous(); };
    torch::optim::Adam opt(ae->parameters(), torch::optim::AdamOptions(3e-4));
    for (int step = 0; step < 600; ++step) {
        const auto x = make(16);
        const auto loss = (ae->decode(ae->encode_full(x).mean) - x).pow(2).mean();
        opt.zero_grad();
        loss.backward();
        opt.step();
    }
    torch::NoGradGuard no_grad;
    const auto held_out = make(32);
    const auto err = (ae->decode(ae->encode(held_out)) - held_out).abs().mean().item<double>();
    EXPECT_LE(err, 0.05);
}

TEST(Denoiser, ViewPermutationEquivariance) {
    torch::NoGradGuard no_grad;
    auto b = ModelBundle::create(tiny_config(), 2);
    b.set_eval();
    torch::manual_seed(9);
    for (int trial = 0; trial < 3; ++trial) {
        const auto zt = torch::randn({2, 4, 4, 8, 8});
        const auto zc = torch::randn({4, 4, 8, 8});
        const auto perm = torch::randperm(4, torch::kLong);
        const int64_t t = trial * 40;
        const auto out = b.denoiser->forward(zt, zc, t, all_tasks());
        const auto out_p = b.denoiser->forward(zt.index_select(1, perm), zc.index_select(0, perm), t, all_tasks());
        EXPECT_TRUE(bitwise_equal(out.index_select(1, perm), out_p));
    }
}

TEST(Denoiser, SingleViewSingleTaskFinite) {
    torch::NoGradGuard no_grad;
    auto b = ModelBundle::create(tiny_config(), 2);
    const Task task[] = {Task::rm};
    const auto out = b.denoiser->forward(torch::randn({1, 1, 4, 8, 8}), torch::randn({1, 4, 8, 8}), 50, task);
    EXPECT_EQ(out.sizes(), (std::vector<int64_t>{1, 1, 4, 8, 8}));
    EXPECT_TRUE(torch::isfinite(out).all().item<bool>());
}

TEST(Denoiser, TaskConditioningIsLive) {
    torch::NoGradGuard no_grad;
    auto b = ModelBundle::create(tiny_config(), 2);
    const auto zt = torch::randn({1, 2, 4, 8, 8});
    const auto zc = torch::randn({2, 4, 8, 8});
    const Task albedo[] = {Task::albedo};
    const Task rm[] = {Task::rm};
    const auto a = b.denoiser->forward(zt, zc, 100, albedo);
    const auto r = b.denoiser->forward(zt, zc, 100, rm);
    EXPECT_GT((a - r).abs().max().item<double>(), 0.0);
}

TEST(Denoiser, Errors) {
    auto b = ModelBundle::create(tiny_config(), 2);
    const Task bad[] = {static_cast<Task>(7)};
    EXPECT_THROW(b.denoiser->forward(torch::randn({1, 1, 4, 8, 8}), torch::randn({1, 4, 8, 8}), 3, bad),
                 InvalidArgument);
    EXPECT_THROW(b.denoiser->forward(torch::randn({2, 1, 4, 8, 8}), torch::randn({1, 4, 8, 8}), 101, all_tasks()),
                 InvalidArgument);
    EXPECT_THROW(b.denoiser->forward(torch::randn({2, 2, 4, 8, 8}), torch::randn({1, 4, 8, 8}), 3, all_tasks()),
                 InvalidArgument);
}

TEST(Denoiser, ForwardCounter) {
    torch::NoGradGuard no_grad;
    auto b = ModelBundle::create(tiny_config(), 2);
    b.denoiser->reset_forward_count();
    one_step_predict(torch::zeros({2, 1, 4, 8, 8}), torch::randn({1, 4, 8, 8}), b.denoiser, all_tasks());
    EXPECT_EQ(b.denoiser->forward_count(), 1);
}

TEST(CanonicalViewOrder, IsPermutation) {
    const auto zt = torch::randn({2, 5, 4, 8, 8});
    const auto zc = torch::randn({5, 4, 8, 8});
    auto order = canonical_view_order(zt, zc);
    std::sort(order.begin(), order.end());
    EXPECT_EQ(order, (std::vector<int64_t>{0, 1, 2, 3, 4}));
}

TEST(Din, ZeroInitIdentityBitwise) {
    torch::NoGradGuard no_grad;
    auto b = ModelBundle::create(tiny_config(), 4);
    for (int s = 0; s < 2; ++s) {
        for (auto& p : b.din->site(s)->output_layer()->parameters()) {
            EXPECT_EQ(p.abs().max().item<double>(), 0.0);
        }
    }
    const auto lat = torch::randn({3, 4, 4, 4});
    const auto cond = torch::rand({3, 3, 32, 32});
    EXPECT_TRUE(bitwise_equal(decode_with_din(b.autoencoder, b.din, lat, cond), b.autoencoder->decode(lat)));
}

TEST(Din, PathIsolation) {
    torch::NoGradGuard no_grad;
    auto b = ModelBundle::create(tiny_config(), 4);
    randomize_din_output(b.din, 0.05);
    const auto lat = torch::randn({1, 4, 4, 4});
    const auto cond_a = torch::rand({1, 3, 32, 32});
    const auto cond_b = torch::rand({1, 3, 32, 32});
    const auto out_a = decode_with_din(b.autoencoder, b.din, lat, cond_a);
    const auto out_b = decode_with_din(b.autoencoder, b.din, lat, cond_b);
    EXPECT_GT((out_a - out_b).abs().max().item<double>(), 0.0);

    const auto taps = b.autoencoder->encoder_taps(cond_a);
    const auto manual = b.autoencoder->decode_hooked(lat, [&](int site, const torch::Tensor& f) {
        return f + b.din->site(site)->forward(taps[static_cast<size_t>(DetailInjectorImpl::encoder_tap_for_site(site))], f);
    });
    EXPECT_TRUE(bitwise_equal(out_a, manual));
}

TEST(Din, ResolutionMismatch) {
    auto b = ModelBundle::create(tiny_config(), 4);
    EXPECT_THROW(decode_with_din(b.autoencoder, b.din, torch::randn({1, 4, 4, 4}), torch::rand({1, 3, 64, 64})),
                 InvalidArgument);
}

TEST(GradientCheck, Autoencoder) {
    auto b = ModelBundle::create(tiny_config(), 5);
    b.autoencoder->to(torch::kFloat64);
    const auto x = torch::rand({1, 3, 16, 16}, torch::kFloat64);
    const auto w = torch::randn({1, 3, 16, 16}, torch::kFloat64);
    auto loss = [&] { return (b.autoencoder->decode(b.autoencoder->encode_full(x).mean) * w).sum(); };
    EXPECT_LE(gradient_check(*b.autoencoder, loss, 10, 1), 1e-3);
}

TEST(GradientCheck, Denoiser) {
    auto b = ModelBundle::create(tiny_config(), 5);
    b.denoiser->to(torch::kFloat64);
    const auto zt = torch::randn({2, 2, 4, 8, 8}, torch::kFloat64);
    const auto zc = torch::randn({2, 4, 8, 8}, torch::kFloat64);
    const auto w = torch::randn({2, 2, 4, 8, 8}, torch::kFloat64);
    auto loss = [&] { return (b.denoiser->forward(zt, zc, 37, all_tasks()) * w).sum(); };
    EXPECT_LE(gradient_check(*b.denoiser, loss, 10, 2), 1e-3);
}

TEST(GradientCheck, Din) {
    auto b = ModelBundle::create(tiny_config(), 5);
    b.autoencoder->to(torch::kFloat64);
    b.din->to(torch::kFloat64);
    randomize_din_output(b.din, 0.1);
    const auto lat = torch::randn({1, 4, 2, 2}, torch::kFloat64);
    const auto cond = torch::rand({1, 3, 16, 16}, torch::kFloat64);
    const auto w = torch::randn({1, 3, 16, 16}, torch::kFloat64);
    auto loss = [&] { return (decode_with_din(b.autoencoder, b.din, lat, cond) * w).sum(); };
    EXPECT_LE(gradient_check(*b.din, loss, 10, 3), 1e-3);
}

TEST(Checkpoint, RoundTripAndIntegrity) {
    test_support::TempDir dir("ckpt");
    auto b = ModelBundle::create(tiny_config(), 6);
    b.completed = {Stage::autoencoder, Stage::multistep};
    b.autoencoder->set_latent_scale(0.7);
    const auto info = save_checkpoint(b, dir.path() / "step_5", 5, Stage::multistep);
    EXPECT_TRUE(std::filesystem::is_regular_file(info.weights));
    EXPECT_TRUE(std::filesystem::is_regular_file(info.sidecar));

    auto loaded = load_checkpoint(info.weights);
    EXPECT_EQ(parameter_hash(*loaded.autoencoder), parameter_hash(*b.autoencoder));
    EXPECT_EQ(parameter_hash(*loaded.denoiser), parameter_hash(*b.denoiser));
    EXPECT_EQ(parameter_hash(*loaded.din), parameter_hash(*b.din));
    EXPECT_EQ(loaded.completed, b.completed);
    EXPECT_DOUBLE_EQ(loaded.autoencoder->latent_scale(), b.autoencoder->latent_scale());
    EXPECT_NO_THROW(load_checkpoint(info.sidecar));

    const auto sidecar = nlohmann::json::parse(read_text_file(info.sidecar));
    EXPECT_EQ(sidecar.at("schema"), 1);
    EXPECT_EQ(sidecar.at("step"), 5);
    EXPECT_EQ(sidecar.at("config_sha256"), b.config.sha256());

    ModelConfig other = tiny_config();
    other.unet_width = 32;
    EXPECT_THROW(load_checkpoint(info.weights, &other), IntegrityError);

    {
        std::ofstream f(info.weights, std::ios::app | std::ios::binary);
        f << "x";
    }
    EXPECT_THROW(load_checkpoint(info.weights), IntegrityError);
    EXPECT_THROW(load_checkpoint(dir.path() / "missing.pt"), IoError);
}

TEST(Stage, Names) {
    for (auto s : {Stage::autoencoder, Stage::multistep, Stage::onestep, Stage::din}) {
        EXPECT_EQ(stage_from_string(to_string(s)), s);
    }
    EXPECT_THROW(stage_from_string("finetune"), InvalidArgument);
}
