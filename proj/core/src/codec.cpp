#include "lipsync/codec.hpp"

#include "lipsync/errors.hpp"

namespace lipsync {

LatentVolume LatentVolume::create(Tensor data, int64_t scale) {
    require(data.dims() == 4, ErrorCode::ShapeMismatch,
            "latents must be [F,C,h,w], got " + shape_str(data.shape()));
    require(scale >= 1, ErrorCode::ConfigMismatch, "codec scale must be >= 1");
    check_finite(data, "LatentVolume");
    return LatentVolume{std::move(data), scale};
}

Tensor IdentityCodec::encode(const Tensor& frames) const {
    require(frames.dims() == 4 && frames.dim(1) == channels_, ErrorCode::ShapeMismatch,
            "identity codec expects " + std::to_string(channels_) + " channels");
    check_finite(frames, "IdentityCodec::encode");
    return frames;
}

Tensor IdentityCodec::decode(const Tensor& latents) const {
    require(latents.dims() == 4 && latents.dim(1) == channels_, ErrorCode::ShapeMismatch,
            "identity codec expects " + std::to_string(channels_) + " latent channels");
    check_finite(latents, "IdentityCodec::decode");
    return latents;
}

namespace {

bool power_of_two(int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

ToyAutoencoder::ToyAutoencoder(int64_t scale, int64_t latent_channels, uint64_t seed)
    : scale_(scale), latent_channels_(latent_channels) {
    require(power_of_two(scale), ErrorCode::ConfigMismatch, "toy codec scale must be a power of 2");
    int64_t depth = 3 * scale * scale;
    require(latent_channels >= 1 && latent_channels <= depth, ErrorCode::ConfigMismatch,
            "latent_channels must be in [1, 3*scale^2]");
    Rng rng(seed ^ 0x1c0dec);
    enc_conv_ = nn::Conv2d(3, depth, scale, scale, 0, rng, /*zero_init=*/true);
    enc_proj_ = nn::Conv2d(depth, latent_channels, 1, 1, 0, rng, /*zero_init=*/true);
    dec_proj_ = nn::Conv2d(latent_channels, depth, 1, 1, 0, rng, /*zero_init=*/true);
    // Exact space-to-depth: out channel c*s*s + dy*s + dx taps pixel (dy, dx)
    // of input channel c.
    Tensor& w = enc_conv_.weight.value();
    for (int64_t c = 0; c < 3; ++c) {
        for (int64_t dy = 0; dy < scale; ++dy) {
            for (int64_t dx = 0; dx < scale; ++dx) {
                w.at4(c * scale * scale + dy * scale + dx, c, dy, dx) = 1.0f;
            }
        }
    }
    // Identity-style projections over the leading sub-bands.
    Tensor& pe = enc_proj_.weight.value();
    Tensor& pd = dec_proj_.weight.value();
    for (int64_t c = 0; c < latent_channels; ++c) {
        pe.at4(c, c, 0, 0) = 1.0f;
        pd.at4(c, c, 0, 0) = 1.0f;
    }
}

Var ToyAutoencoder::encode_var(const Var& frames) const {
    Var depth = enc_conv_.forward(frames);
    return enc_proj_.forward(depth);
}

Var ToyAutoencoder::decode_var(const Var& latents) const {
    Var depth = dec_proj_.forward(latents);
    return ag::pixel_shuffle(depth, scale_);
}

Tensor ToyAutoencoder::encode(const Tensor& frames) const {
    require(frames.dims() == 4 && frames.dim(1) == 3, ErrorCode::ShapeMismatch,
            "toy codec expects RGB frames");
    require(frames.dim(2) % scale_ == 0 && frames.dim(3) % scale_ == 0, ErrorCode::ShapeMismatch,
            "frame size " + shape_str(frames.shape()) + " not divisible by codec scale " +
                std::to_string(scale_));
    check_finite(frames, "ToyAutoencoder::encode");
    NoGradGuard ng;
    return encode_var(Var::constant(frames)).value();
}

Tensor ToyAutoencoder::decode(const Tensor& latents) const {
    require(latents.dims() == 4 && latents.dim(1) == latent_channels_, ErrorCode::ShapeMismatch,
            "latent channel mismatch");
    check_finite(latents, "ToyAutoencoder::decode");
    NoGradGuard ng;
    return decode_var(Var::constant(latents)).value();
}

nn::ParamList<float> ToyAutoencoder::parameters() {
    nn::ParamList<float> out;
    enc_conv_.visit("enc_conv", out);
    enc_proj_.visit("enc_proj", out);
    dec_proj_.visit("dec_proj", out);
    return out;
}

double ToyAutoencoder::fit(const std::vector<Tensor>& frame_batches, int steps, double lr,
                           uint64_t seed) {
    nn::AdamW opt;
    opt.lr = lr;
    opt.attach(parameters());
    Rng rng(seed);
    double last = 0.0;
    for (int s = 0; s < steps; ++s) {
        const Tensor& batch = frame_batches[rng.below(frame_batches.size())];
        opt.zero_grad();
        Var x = Var::constant(batch);
        Var recon = decode_var(encode_var(x));
        Var loss = ag::mse_to(recon, batch);
        last = loss.value()[0];
        loss.backward();
        opt.step();
    }
    return last;
}

LatentVolume pixel_to_latent(const VideoClip& clip, const LatentCodec& codec) {
    require(clip.height() % codec.scale() == 0 && clip.width() % codec.scale() == 0,
            ErrorCode::ShapeMismatch,
            "frame size not divisible by codec scale " + std::to_string(codec.scale()));
    return LatentVolume::create(codec.encode(clip.frames), codec.scale());
}

VideoClip latent_to_pixel(const LatentVolume& latents, const LatentCodec& codec, double fps) {
    Tensor frames = codec.decode(latents.data);
    // decoded values may overshoot [0,1] slightly; clamp at the boundary
    for (int64_t i = 0; i < frames.numel(); ++i) {
        frames[i] = std::clamp(frames[i], 0.0f, 1.0f);
    }
    return VideoClip::create(std::move(frames), fps);
}

void CodecSpec::validate() const {
    require(kind == "identity" || kind == "toy", ErrorCode::SchemaError,
            "codec kind must be 'identity' or 'toy', got '" + kind + "'");
    if (kind == "identity") {
        require(scale == 1, ErrorCode::SchemaError, "identity codec has scale 1");
        require(latent_channels == 1 || latent_channels == 3, ErrorCode::SchemaError,
                "identity codec carries 1 or 3 channels");
    } else {
        require(scale >= 2 && power_of_two(scale), ErrorCode::SchemaError,
                "toy codec scale must be a power of two >= 2");
        require(latent_channels >= 1 && latent_channels <= 3 * scale * scale,
                ErrorCode::SchemaError, "toy codec latent_channels out of range");
    }
}

std::shared_ptr<const LatentCodec> make_codec(const CodecSpec& spec) {
    spec.validate();
    if (spec.kind == "identity") {
        return std::make_shared<IdentityCodec>(spec.latent_channels);
    }
    return std::make_shared<ToyAutoencoder>(spec.scale, spec.latent_channels, spec.seed);
}

}  // namespace lipsync
