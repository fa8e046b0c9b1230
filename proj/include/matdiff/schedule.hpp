// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace matdiff {

enum class BaseSchedule { linear_beta, cosine };

std::string to_string(BaseSchedule kind);
BaseSchedule base_schedule_from_string(const std::string& name);

/// Which material a denoiser pass predicts. Albedo is RGB; rm is packed (roughness, metallic, 0).
enum class Task : int64_t { albedo = 0, rm = 1 };

std::string to_string(Task task);

/// Cumulative signal coefficients alpha_bar[t] for t = 0..T.
///
/// alpha_bar is nonincreasing, alpha_bar[0] is 1 and alpha_bar[T] is exactly 0, so
/// z_T carries no signal and a v-prediction at t = T is the negated clean latent.
struct NoiseSchedule {
    int64_t T = 0;
    std::vector<double> alpha_bar;

    double signal_coef(int64_t t) const; ///< sqrt(alpha_bar[t])
    double noise_coef(int64_t t) const;  ///< sqrt(1 - alpha_bar[t])
};

/// Builds the base schedule and rescales sqrt(alpha_bar) affinely so the terminal value is 0
/// while the t = 0 value is preserved.
NoiseSchedule make_schedule(int64_t T, BaseSchedule kind);

// v-parameterization algebra. All latents share one shape; t must lie in [0, T].

/// z_t = sqrt(ab) * z0 + sqrt(1 - ab) * eps
torch::Tensor add_noise(const torch::Tensor& z0, const torch::Tensor& eps, int64_t t,
                        const NoiseSchedule& s);

/// v = sqrt(ab) * eps - sqrt(1 - ab) * z0
torch::Tensor v_target(const torch::Tensor& z0, const torch::Tensor& eps, int64_t t,
                       const NoiseSchedule& s);

/// z0 = sqrt(ab) * z_t - sqrt(1 - ab) * v
torch::Tensor z0_from_v(const torch::Tensor& z_t, const torch::Tensor& v, int64_t t,
                        const NoiseSchedule& s);

/// eps = sqrt(1 - ab) * z_t + sqrt(ab) * v
torch::Tensor eps_from_v(const torch::Tensor& z_t, const torch::Tensor& v, int64_t t,
                         const NoiseSchedule& s);

class Denoiser;

/// One-step estimate at t = T: z0_hat = -denoiser(concat(eps, z_c), T, task).
///
/// `eps` is [K, V, C, h, w] with one slice per entry of `tasks`; `z_c` is the shared
/// condition latent [V, C, h, w]. Returns [K, V, C, h, w].
torch::Tensor one_step_predict(const torch::Tensor& eps, const torch::Tensor& z_c,
                               Denoiser& denoiser, std::span<const Task> tasks);

} // namespace matdiff
