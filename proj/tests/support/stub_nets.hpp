#pragma once

// Test-double denoising networks. These live outside the library on purpose:
// the oracles must stay independent of the implementation path they check.

#include <cmath>

#include "lipsync/denoiser.hpp"
#include "lipsync/diffusion.hpp"

namespace testsupport {

// F == 0: the preconditioned denoiser collapses to c_skip * z_t.
template <typename T>
struct ZeroNetT : lipsync::DenoisingNetworkT<T> {
    lipsync::VarT<T> forward(const lipsync::VarT<T>& scaled_noisy,
                             const lipsync::ConditionVarsT<T>&, T) override {
        return lipsync::VarT<T>::constant(lipsync::TensorT<T>::zeros(scaled_noisy.shape()));
    }
};

// Algebraic inverse of the preconditioning: given the scaled input c_in*z_t
// and c_noise = ln(sigma)/4, emits (z0 - c_skip*z_t)/c_out so the denoiser
// reproduces z0 exactly.
template <typename T>
struct OracleNetT : lipsync::DenoisingNetworkT<T> {
    lipsync::TensorT<T> z0;
    double sigma_data = 0.5;

    explicit OracleNetT(lipsync::TensorT<T> z0_, double sigma_data_ = 0.5)
        : z0(std::move(z0_)), sigma_data(sigma_data_) {}

    lipsync::VarT<T> forward(const lipsync::VarT<T>& scaled_noisy,
                             const lipsync::ConditionVarsT<T>&, T c_noise) override {
        double sigma = std::exp(4.0 * double(c_noise));
        auto c = lipsync::precondition(sigma, sigma_data);
        lipsync::TensorT<T> out(scaled_noisy.shape());
        const auto& sv = scaled_noisy.value();
        for (int64_t i = 0; i < out.numel(); ++i) {
            double z_t = double(sv[i]) / c.c_in;
            out[i] = static_cast<T>((double(z0[i]) - c.c_skip * z_t) / c.c_out);
        }
        return lipsync::VarT<T>::constant(std::move(out));
    }
};

// Deterministic per-frame map of (scaled noisy latents, masked latents) with
// no cross-frame coupling; segmented and whole-sequence inference must agree
// on it exactly.
template <typename T>
struct FrameLocalNetT : lipsync::DenoisingNetworkT<T> {
    lipsync::VarT<T> forward(const lipsync::VarT<T>& scaled_noisy,
                             const lipsync::ConditionVarsT<T>& cond, T c_noise) override {
        lipsync::TensorT<T> out(scaled_noisy.shape());
        const auto& x = scaled_noisy.value();
        const auto& m = cond.masked_latents.value();
        for (int64_t i = 0; i < out.numel(); ++i) {
            out[i] = static_cast<T>(0.3 * std::tanh(double(x[i])) + 0.5 * double(m[i]) +
                                    0.01 * double(c_noise));
        }
        return lipsync::VarT<T>::constant(std::move(out));
    }
};

// Two trainable scalars: F(x) = a*x + b. Small enough that finite differences
// are exact to rounding; used for the loss-gradient oracle.
template <typename T>
struct ScalarNetT : lipsync::DenoisingNetworkT<T> {
    lipsync::VarT<T> a;
    lipsync::VarT<T> b;

    ScalarNetT(T a0, T b0)
        : a(lipsync::VarT<T>::param(lipsync::TensorT<T>::full({1}, a0))),
          b(lipsync::VarT<T>::param(lipsync::TensorT<T>::full({1}, b0))) {}

    lipsync::VarT<T> forward(const lipsync::VarT<T>& scaled_noisy,
                             const lipsync::ConditionVarsT<T>&, T) override {
        return lipsync::ag::shift_by(lipsync::ag::scale_by(scaled_noisy, a), b);
    }

    int64_t parameter_count() const override { return 2; }
};

}  // namespace testsupport
