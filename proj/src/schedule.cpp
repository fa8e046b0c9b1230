// SPDX-License-Identifier: Apache-2.0
#include "matdiff/schedule.hpp"

#include <cmath>
#include <numbers>

#include "matdiff/errors.hpp"
#include "matdiff/models.hpp"

namespace matdiff {

std::string to_string(BaseSchedule kind) {
    return kind == BaseSchedule::cosine ? "cosine" : "linear_beta";
}

BaseSchedule base_schedule_from_string(const std::string& name) {
    if (name == "cosine") {
        return BaseSchedule::cosine;
    }
    if (name == "linear_beta") {
        return BaseSchedule::linear_beta;
    }
    throw InvalidArgument("unknown base schedule '" + name + "'");
}

std::string to_string(Task task) { return task == Task::albedo ? "albedo" : "rm"; }

double NoiseSchedule::signal_coef(int64_t t) const {
    return std::sqrt(alpha_bar.at(static_cast<size_t>(t)));
}

double NoiseSchedule::noise_coef(int64_t t) const {
    return std::sqrt(1.0 - alpha_bar.at(static_cast<size_t>(t)));
}

NoiseSchedule make_schedule(int64_t T, BaseSchedule kind) {
    if (T < 1) {
        throw InvalidArgument("make_schedule: T must be >= 1, got " + std::to_string(T));
    }
    std::vector<double> ab(static_cast<size_t>(T) + 1);
    if (kind == BaseSchedule::linear_beta) {
        // "scaled linear" betas of latent-diffusion practice.
        const double lo = std::sqrt(0.00085);
        const double hi = std::sqrt(0.012);
        double prod = 1.0;
        ab[0] = 1.0;
        for (int64_t i = 1; i <= T; ++i) {
            const double frac = T == 1 ? 0.0 : static_cast<double>(i - 1) / static_cast<double>(T - 1);
            const double root = lo + (hi - lo) * frac;
            prod *= 1.0 - root * root;
            ab[static_cast<size_t>(i)] = prod;
        }
    } else {
        constexpr double offset = 0.008;
        auto f = [&](double t) {
            const double c = std::cos((t / static_cast<double>(T) + offset) / (1.0 + offset) *
                                      std::numbers::pi / 2.0);
            return c * c;
        };
        const double f0 = f(0.0);
        for (int64_t i = 0; i <= T; ++i) {
            ab[static_cast<size_t>(i)] = f(static_cast<double>(i)) / f0;
        }
    }

    // Affine rescale of sqrt(alpha_bar): terminal value -> 0, initial value kept.
    const double first = std::sqrt(ab.front());
    const double last = std::sqrt(ab.back());
    for (size_t i = 0; i < ab.size(); ++i) {
        const double r = (std::sqrt(ab[i]) - last) * first / (first - last);
        ab[i] = r * r;
    }
    ab.back() = 0.0;
    return NoiseSchedule{T, std::move(ab)};
}

namespace {

void check_pair(const torch::Tensor& a, const torch::Tensor& b, int64_t t, const NoiseSchedule& s,
                const char* op) {
    if (t < 0 || t > s.T) {
        throw InvalidArgument(std::string(op) + ": timestep " + std::to_string(t) +
                              " outside [0, " + std::to_string(s.T) + "]");
    }
    if (a.sizes() != b.sizes()) {
        throw InvalidArgument(std::string(op) + ": shape mismatch");
    }
}

// a*x + b*y with exact handling of the 0 and 1 coefficients that occur at t = 0 and t = T,
// so endpoint identities hold bitwise.
torch::Tensor combine(double a, const torch::Tensor& x, double b, const torch::Tensor& y) {
    auto term = [](double c, const torch::Tensor& v) -> torch::Tensor {
        if (c == 1.0) {
            return v;
        }
        if (c == -1.0) {
            return -v;
        }
        return v * c;
    };
    if (a == 0.0 && b == 0.0) {
        return torch::zeros_like(x);
    }
    if (a == 0.0) {
        return term(b, y).clone();
    }
    if (b == 0.0) {
        return term(a, x).clone();
    }
    return term(a, x) + term(b, y);
}

} // namespace

torch::Tensor add_noise(const torch::Tensor& z0, const torch::Tensor& eps, int64_t t,
                        const NoiseSchedule& s) {
    check_pair(z0, eps, t, s, "add_noise");
    return combine(s.signal_coef(t), z0, s.noise_coef(t), eps);
}

torch::Tensor v_target(const torch::Tensor& z0, const torch::Tensor& eps, int64_t t,
                       const NoiseSchedule& s) {
    check_pair(z0, eps, t, s, "v_target");
    return combine(s.signal_coef(t), eps, -s.noise_coef(t), z0);
}

torch::Tensor z0_from_v(const torch::Tensor& z_t, const torch::Tensor& v, int64_t t,
                        const NoiseSchedule& s) {
    check_pair(z_t, v, t, s, "z0_from_v");
    return combine(s.signal_coef(t), z_t, -s.noise_coef(t), v);
}

torch::Tensor eps_from_v(const torch::Tensor& z_t, const torch::Tensor& v, int64_t t,
                         const NoiseSchedule& s) {
    check_pair(z_t, v, t, s, "eps_from_v");
    return combine(s.noise_coef(t), z_t, s.signal_coef(t), v);
}

torch::Tensor one_step_predict(const torch::Tensor& eps, const torch::Tensor& z_c,
                               Denoiser& denoiser, std::span<const Task> tasks) {
    if (eps.dim() != 5 || z_c.dim() != 4 || eps.size(0) != static_cast<int64_t>(tasks.size()) ||
        eps.size(1) != z_c.size(0) || eps.size(3) != z_c.size(2) || eps.size(4) != z_c.size(3)) {
        throw InvalidArgument("one_step_predict: eps must be [K,V,C,h,w] aligned with z_c [V,C,h,w]");
    }
    return -denoiser->forward(eps, z_c, denoiser->terminal_step(), tasks);
}

} // namespace matdiff
