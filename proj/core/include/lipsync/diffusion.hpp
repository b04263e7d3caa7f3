#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "lipsync/codec.hpp"
#include "lipsync/denoiser.hpp"
#include "lipsync/rng.hpp"

namespace lipsync {

// Preconditioning coefficients, all functions of the noise level sigma.
struct PreconditionCoeffs {
    double c_skip = 0;
    double c_out = 0;
    double c_in = 0;
    double c_noise = 0;
};

// c_skip = sd^2/(s^2+sd^2), c_out = s*sd/sqrt(s^2+sd^2),
// c_in = 1/sqrt(s^2+sd^2), c_noise = ln(s)/4.
PreconditionCoeffs precondition(double sigma, double sigma_data = 0.5);

struct NoiseSchedule {
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    double rho = 7.0;
    int num_steps = 15;

    void validate() const;
    // num_steps decreasing levels followed by a trailing 0.
    std::vector<double> sigmas() const;
};

struct DiffusionState {
    LatentVolume z_t;
    double sigma = 0;
    int step_index = 0;
};

// lambda_sigma weighting of the score-matching objective.
struct LossWeights {
    std::function<double(double)> lambda_sigma;

    static LossWeights edm_default(double sigma_data = 0.5) {
        return LossWeights{[sigma_data](double sigma) {
            double s2 = sigma * sigma, d2 = sigma_data * sigma_data;
            return (s2 + d2) / (s2 * d2);
        }};
    }

    static LossWeights constant(double value = 1.0) {
        return LossWeights{[value](double) { return value; }};
    }
};

// z_t = z0 + n with n ~ N(0, sigma^2), elementwise, deterministic per seed.
std::pair<LatentVolume, LatentVolume> add_noise(const LatentVolume& z0, double sigma, Rng& rng);

// Log-normal training noise level: ln(sigma) ~ N(mean_log, std_log^2).
double sample_training_sigma(Rng& rng, double mean_log = -1.2, double std_log = 1.2);

// uncond + scale * (cond - uncond)
Tensor cfg_combine(const Tensor& cond_out, const Tensor& uncond_out, double scale);
LatentVolume cfg_combine(const LatentVolume& cond_out, const LatentVolume& uncond_out,
                         double scale);

// The preconditioned denoiser composition:
//   D(z_t) = c_skip*z_t + c_out * F(c_in*z_t, conditions; c_noise)
template <typename T>
VarT<T> denoise_var(const VarT<T>& z_t, double sigma, const ConditionVarsT<T>& cond,
                    DenoisingNetworkT<T>& net, double sigma_data = 0.5) {
    require(cond.masked_latents.defined() && cond.masked_latents.shape() == z_t.shape(),
            ErrorCode::ShapeMismatch, "masked-video latents must align with z_t");
    PreconditionCoeffs c = precondition(sigma, sigma_data);
    VarT<T> scaled = ag::scale(z_t, static_cast<T>(c.c_in));
    VarT<T> raw = net.forward(scaled, cond, static_cast<T>(c.c_noise));
    require(raw.shape() == z_t.shape(), ErrorCode::ShapeMismatch,
            "network output shape " + shape_str(raw.shape()) + " != input " +
                shape_str(z_t.shape()));
    return ag::add(ag::scale(z_t, static_cast<T>(c.c_skip)), ag::scale(raw, static_cast<T>(c.c_out)));
}

// lambda_sigma * mean((D(z_t) - z0)^2); mean over frames, channels and space.
template <typename T>
VarT<T> dsm_loss_var(const TensorT<T>& z0, const VarT<T>& z_t, double sigma,
                     const ConditionVarsT<T>& cond, DenoisingNetworkT<T>& net,
                     const LossWeights& weights, double sigma_data = 0.5) {
    VarT<T> pred = denoise_var(z_t, sigma, cond, net, sigma_data);
    VarT<T> err = ag::mse_to(pred, z0);
    return ag::scale(err, static_cast<T>(weights.lambda_sigma(sigma)));
}

// Tensor-level wrappers used by the sampler and the evaluation paths.
LatentVolume denoise(const DiffusionState& state, const ConditionVars& cond, DenoisingNetwork& net,
                     double sigma_data = 0.5);
double dsm_loss(const LatentVolume& z0, const DiffusionState& state, const ConditionVars& cond,
                DenoisingNetwork& net, const LossWeights& weights, double sigma_data = 0.5);

// Deterministic first-order (Euler) sampler over the schedule, applying
// guidance at every step. initial_noise is standard normal; it is scaled by
// the first sigma internally.
LatentVolume sample(const LatentVolume& initial_noise, const ConditionVars& cond,
                    DenoisingNetwork& net, const NoiseSchedule& schedule, double guidance_scale,
                    double sigma_data = 0.5);

}  // namespace lipsync
