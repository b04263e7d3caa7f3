#pragma once

#include <vector>

#include "lipsync/autograd.hpp"

namespace lipsync {

// The condition triple as the network consumes it: multi-scale identity
// residuals, per-frame windowed audio features [F, 2k+1, D_a], and the
// masked-video latents [F, C, h, w]. Dropped streams are zero tensors of the
// correct shape; masked latents are always present.
template <typename T>
struct ConditionVarsT {
    std::vector<VarT<T>> id_levels;
    VarT<T> audio;
    VarT<T> masked_latents;
};

using ConditionVars = ConditionVarsT<float>;

// Returns the same bundle with audio and identity features zeroed — the
// unconditional branch used for guidance. Masked latents stay untouched.
template <typename T>
ConditionVarsT<T> unconditional_like(const ConditionVarsT<T>& cond) {
    ConditionVarsT<T> out;
    for (const auto& level : cond.id_levels) {
        out.id_levels.push_back(VarT<T>::constant(TensorT<T>::zeros(level.shape())));
    }
    if (cond.audio.defined()) {
        out.audio = VarT<T>::constant(TensorT<T>::zeros(cond.audio.shape()));
    }
    out.masked_latents = cond.masked_latents;
    return out;
}

// The trainable network F_theta of the preconditioned denoiser. It receives
// the already-scaled noisy latents (c_in * z_t) and the noise embedding value
// c_noise; all conditioning arrives through the bundle.
template <typename T>
class DenoisingNetworkT {
public:
    virtual ~DenoisingNetworkT() = default;
    virtual VarT<T> forward(const VarT<T>& scaled_noisy, const ConditionVarsT<T>& cond,
                            T c_noise) = 0;
    virtual int64_t parameter_count() const { return 0; }
};

using DenoisingNetwork = DenoisingNetworkT<float>;

}  // namespace lipsync
