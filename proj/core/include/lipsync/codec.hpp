#pragma once

#include <memory>

#include "lipsync/media.hpp"
#include "lipsync/nn.hpp"
#include "lipsync/tensor.hpp"

namespace lipsync {

// Latent tensor [F, C_lat, H/scale, W/scale] tied to the codec that produced it.
struct LatentVolume {
    Tensor data;
    int64_t scale = 1;

    static LatentVolume create(Tensor data, int64_t scale);
};

// Pixel <-> latent transform. Internally frames are [0,1]; a codec converts to
// its own native range at this boundary.
class LatentCodec {
public:
    virtual ~LatentCodec() = default;
    virtual int64_t scale() const = 0;
    virtual int64_t latent_channels() const = 0;
    virtual Tensor encode(const Tensor& frames) const = 0;   // [F,C,H,W] -> [F,Cl,h,w]
    virtual Tensor decode(const Tensor& latents) const = 0;  // inverse map
};

// Scale-1 pass-through; latents are the pixel values themselves.
class IdentityCodec : public LatentCodec {
public:
    explicit IdentityCodec(int64_t channels = 3) : channels_(channels) {}
    int64_t scale() const override { return 1; }
    int64_t latent_channels() const override { return channels_; }
    Tensor encode(const Tensor& frames) const override;
    Tensor decode(const Tensor& latents) const override;

private:
    int64_t channels_;
};

// Small trainable convolutional autoencoder. Encode is a stride-s conv
// followed by a 1x1 projection; decode is a 1x1 expansion plus pixel shuffle.
// Weights initialize to an exact space-to-depth pair, so with
// latent_channels == 3*scale^2 the untrained codec reconstructs to float
// precision; narrower latents start as a structured truncation and can be
// fit() on data.
class ToyAutoencoder : public LatentCodec {
public:
    ToyAutoencoder(int64_t scale, int64_t latent_channels, uint64_t seed = 0);

    int64_t scale() const override { return scale_; }
    int64_t latent_channels() const override { return latent_channels_; }
    Tensor encode(const Tensor& frames) const override;
    Tensor decode(const Tensor& latents) const override;

    // Reconstruction training on clip frames; returns final MSE.
    double fit(const std::vector<Tensor>& frame_batches, int steps, double lr, uint64_t seed = 1);

    nn::ParamList<float> parameters();

private:
    Var encode_var(const Var& frames) const;
    Var decode_var(const Var& latents) const;

    int64_t scale_;
    int64_t latent_channels_;
    nn::Conv2d enc_conv_;   // [3s^2, 3, s, s], stride s
    nn::Conv2d enc_proj_;   // 1x1, 3s^2 -> C_lat
    nn::Conv2d dec_proj_;   // 1x1, C_lat -> 3s^2
};

LatentVolume pixel_to_latent(const VideoClip& clip, const LatentCodec& codec);
VideoClip latent_to_pixel(const LatentVolume& latents, const LatentCodec& codec, double fps);

// Declarative codec description; checkpoints persist this so a run can be
// reconstructed from the file alone.
struct CodecSpec {
    std::string kind = "identity";  // "identity" or "toy"
    int64_t scale = 1;
    int64_t latent_channels = 3;
    uint64_t seed = 0;

    void validate() const;
};

std::shared_ptr<const LatentCodec> make_codec(const CodecSpec& spec);

}  // namespace lipsync
