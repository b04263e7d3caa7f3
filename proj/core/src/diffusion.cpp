#include "lipsync/diffusion.hpp"

#include <cmath>

#include "lipsync/errors.hpp"

namespace lipsync {

PreconditionCoeffs precondition(double sigma, double sigma_data) {
    require(sigma > 0, ErrorCode::InvalidSigma, "sigma must be positive");
    require(sigma_data > 0, ErrorCode::InvalidSigma, "sigma_data must be positive");
    double s2 = sigma * sigma;
    double d2 = sigma_data * sigma_data;
    double sum = s2 + d2;
    PreconditionCoeffs c;
    c.c_skip = d2 / sum;
    c.c_out = sigma * sigma_data / std::sqrt(sum);
    c.c_in = 1.0 / std::sqrt(sum);
    c.c_noise = 0.25 * std::log(sigma);
    return c;
}

void NoiseSchedule::validate() const {
    require(sigma_min > 0 && sigma_min < sigma_max, ErrorCode::ConfigMismatch,
            "need 0 < sigma_min < sigma_max");
    require(num_steps >= 1, ErrorCode::ConfigMismatch, "num_steps must be >= 1");
    require(rho > 0, ErrorCode::ConfigMismatch, "rho must be positive");
}

std::vector<double> NoiseSchedule::sigmas() const {
    validate();
    std::vector<double> out(static_cast<size_t>(num_steps) + 1);
    if (num_steps == 1) {
        out[0] = sigma_max;
    } else {
        double inv_rho = 1.0 / rho;
        double max_r = std::pow(sigma_max, inv_rho);
        double min_r = std::pow(sigma_min, inv_rho);
        for (int i = 0; i < num_steps; ++i) {
            double t = double(i) / double(num_steps - 1);
            out[static_cast<size_t>(i)] = std::pow(max_r + t * (min_r - max_r), rho);
        }
    }
    out[static_cast<size_t>(num_steps)] = 0.0;
    return out;
}

std::pair<LatentVolume, LatentVolume> add_noise(const LatentVolume& z0, double sigma, Rng& rng) {
    require(sigma >= 0, ErrorCode::InvalidSigma, "sigma must be >= 0");
    check_finite(z0.data, "add_noise");
    Tensor noise(z0.data.shape());
    for (int64_t i = 0; i < noise.numel(); ++i) {
        noise[i] = static_cast<float>(rng.normal() * sigma);
    }
    Tensor z_t = z0.data;
    for (int64_t i = 0; i < z_t.numel(); ++i) {
        z_t[i] += noise[i];
    }
    return {LatentVolume{std::move(z_t), z0.scale}, LatentVolume{std::move(noise), z0.scale}};
}

double sample_training_sigma(Rng& rng, double mean_log, double std_log) {
    return std::exp(mean_log + std_log * rng.normal());
}

Tensor cfg_combine(const Tensor& cond_out, const Tensor& uncond_out, double scale) {
    check_same_shape(cond_out, uncond_out, "cfg_combine");
    Tensor out = uncond_out;
    for (int64_t i = 0; i < out.numel(); ++i) {
        out[i] = static_cast<float>(double(uncond_out[i]) +
                                    scale * (double(cond_out[i]) - double(uncond_out[i])));
    }
    return out;
}

LatentVolume cfg_combine(const LatentVolume& cond_out, const LatentVolume& uncond_out,
                         double scale) {
    require(cond_out.scale == uncond_out.scale, ErrorCode::ShapeMismatch,
            "cfg_combine on latents with different codec scales");
    return LatentVolume{cfg_combine(cond_out.data, uncond_out.data, scale), cond_out.scale};
}

LatentVolume denoise(const DiffusionState& state, const ConditionVars& cond, DenoisingNetwork& net,
                     double sigma_data) {
    NoGradGuard ng;
    Var z_t = Var::constant(state.z_t.data);
    Var out = denoise_var<float>(z_t, state.sigma, cond, net, sigma_data);
    return LatentVolume{out.value(), state.z_t.scale};
}

double dsm_loss(const LatentVolume& z0, const DiffusionState& state, const ConditionVars& cond,
                DenoisingNetwork& net, const LossWeights& weights, double sigma_data) {
    NoGradGuard ng;
    check_finite(z0.data, "dsm_loss z0");
    Var z_t = Var::constant(state.z_t.data);
    Var loss = dsm_loss_var<float>(z0.data, z_t, state.sigma, cond, net, weights, sigma_data);
    return loss.value()[0];
}

LatentVolume sample(const LatentVolume& initial_noise, const ConditionVars& cond,
                    DenoisingNetwork& net, const NoiseSchedule& schedule, double guidance_scale,
                    double sigma_data) {
    NoGradGuard ng;
    std::vector<double> sigmas = schedule.sigmas();
    ConditionVars uncond;
    bool use_cfg = guidance_scale != 1.0;
    if (use_cfg) {
        uncond = unconditional_like(cond);
    }
    Tensor z = initial_noise.data;
    for (int64_t i = 0; i < z.numel(); ++i) {
        z[i] = static_cast<float>(double(z[i]) * sigmas[0]);
    }
    for (int step = 0; step < schedule.num_steps; ++step) {
        double sigma = sigmas[static_cast<size_t>(step)];
        double sigma_next = sigmas[static_cast<size_t>(step) + 1];
        DiffusionState state{LatentVolume{z, initial_noise.scale}, sigma, step};
        LatentVolume denoised = denoise(state, cond, net, sigma_data);
        if (use_cfg) {
            LatentVolume denoised_uncond = denoise(state, uncond, net, sigma_data);
            denoised = cfg_combine(denoised, denoised_uncond, guidance_scale);
        }
        // Euler step: z += (sigma_next - sigma) * (z - D(z)) / sigma
        double ratio = (sigma_next - sigma) / sigma;
        for (int64_t i = 0; i < z.numel(); ++i) {
            z[i] = static_cast<float>(double(z[i]) +
                                      ratio * (double(z[i]) - double(denoised.data[i])));
        }
    }
    return LatentVolume{std::move(z), initial_noise.scale};
}

}  // namespace lipsync
