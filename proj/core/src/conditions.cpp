#include "lipsync/conditions.hpp"

#include <algorithm>
#include <cmath>

#include "lipsync/errors.hpp"

namespace lipsync {

ConditionVars to_condition_vars(const ConditionBundle& bundle) {
    ConditionVars vars;
    for (const Tensor& level : bundle.id_features.levels) {
        vars.id_levels.push_back(Var::constant(level));
    }
    vars.audio = Var::constant(bundle.audio.per_frame);
    vars.masked_latents = Var::constant(bundle.masked_latents.data);
    return vars;
}

void IdGuiderConfig::validate() const {
    require(!downsampler_channels.empty(), ErrorCode::ConfigMismatch,
            "downsampler needs at least one conv");
    require(!level_channels.empty(), ErrorCode::ConfigMismatch, "guider needs UNet levels");
    require(res_blocks_per_level >= 1, ErrorCode::ConfigMismatch, "res_blocks_per_level >= 1");
    require(pixel_scale >= 1 && (pixel_scale & (pixel_scale - 1)) == 0, ErrorCode::ConfigMismatch,
            "pixel_scale must be a power of two");
    require(int64_t(1) << (downsampler_channels.size()) >= pixel_scale, ErrorCode::ConfigMismatch,
            "downsampler too shallow for the codec scale");
    require(input_channels >= 2, ErrorCode::ConfigMismatch, "input must include the indicator");
    for (int64_t c : level_channels) {
        require(c % norm_groups == 0, ErrorCode::ConfigMismatch,
                "level channels must be divisible by norm groups");
    }
    for (int64_t c : downsampler_channels) {
        require(c >= 1, ErrorCode::ConfigMismatch, "downsampler channels must be positive");
    }
}

int64_t IdGuiderConfig::parameter_count() const {
    validate();
    auto conv3 = [](int64_t ci, int64_t co) { return 9 * ci * co + co; };
    auto conv1 = [](int64_t ci, int64_t co) { return ci * co + co; };
    // ResBlock(c->c, no time): two GroupNorms (2c each) + two 3x3 convs
    auto res_block = [&](int64_t c) { return 2 * (2 * c) + 2 * conv3(c, c); };
    int64_t total = 0;
    int64_t c_prev = input_channels;
    for (int64_t c : downsampler_channels) {
        total += conv3(c_prev, c);
        c_prev = c;
    }
    total += conv3(c_prev, level_channels[0]);
    for (size_t l = 0; l < level_channels.size(); ++l) {
        int64_t c = level_channels[l];
        total += res_blocks_per_level * res_block(c);
        total += conv1(c, c);  // zero-init tap
        if (l + 1 < level_channels.size()) {
            total += conv3(c, level_channels[l + 1]);
        }
    }
    return total;
}

IdGuiderConfig IdGuiderConfig::for_unet(const UNetConfig& unet, int64_t codec_scale,
                                        int64_t image_channels) {
    IdGuiderConfig cfg;
    cfg.level_channels = unet.down_channels;
    cfg.pixel_scale = codec_scale;
    cfg.input_channels = image_channels + 1;
    cfg.norm_groups = unet.norm_groups;
    // keep the toy downsampler in proportion to the UNet width
    if (unet.down_channels[0] < 32) {
        int64_t c0 = unet.down_channels[0];
        cfg.downsampler_channels = {c0, c0, 2 * c0, c0};
    }
    return cfg;
}

IdGuiderConfig full_scale_guider_config() {
    IdGuiderConfig cfg;
    cfg.downsampler_channels = {32, 64, 128, 64};
    cfg.level_channels = {320, 640, 1280, 1280};
    cfg.res_blocks_per_level = 1;
    cfg.pixel_scale = 8;
    cfg.input_channels = 4;
    cfg.norm_groups = 32;
    return cfg;
}

IdFeaturePyramid encode_identity(const Tensor& ref_image, const Tensor& lip_mask,
                                 IdGuider& guider) {
    require(ref_image.dims() == 4 && ref_image.dim(0) == 1, ErrorCode::ShapeMismatch,
            "reference image must be [1,C,H,W]");
    require(lip_mask.dims() == 4 && lip_mask.dim(0) == 1 && lip_mask.dim(1) == 1,
            ErrorCode::ShapeMismatch, "lip mask must be [1,1,H,W]");
    require(lip_mask.dim(2) == ref_image.dim(2) && lip_mask.dim(3) == ref_image.dim(3),
            ErrorCode::ShapeMismatch, "reference image and lip mask must align");
    check_finite(ref_image, "encode_identity ref");
    check_finite(lip_mask, "encode_identity mask");
    NoGradGuard ng;
    Var input = ag::concat<float>({Var::constant(ref_image), Var::constant(lip_mask)}, 1);
    std::vector<Var> levels = guider.forward(input);
    IdFeaturePyramid pyramid;
    for (Var& level : levels) {
        const Shape& s = level.shape();
        pyramid.levels.push_back(level.value().reshaped({s[1], s[2], s[3]}));
    }
    return pyramid;
}

AudioFeatureWindowed window_audio(const Tensor& features, int64_t k) {
    require(features.dims() == 2, ErrorCode::ShapeMismatch, "features must be [T, D]");
    require(k >= 0, ErrorCode::ConfigMismatch, "window radius must be >= 0");
    int64_t t_steps = features.dim(0), d = features.dim(1);
    AudioFeatureWindowed out;
    out.k = k;
    out.per_frame = Tensor({t_steps, 2 * k + 1, d});
    for (int64_t t = 0; t < t_steps; ++t) {
        for (int64_t j = -k; j <= k; ++j) {
            int64_t src = t + j;
            if (src < 0 || src >= t_steps) {
                continue;  // stays exact zero
            }
            for (int64_t i = 0; i < d; ++i) {
                out.per_frame.at3(t, j + k, i) = features.at2(src, i);
            }
        }
    }
    return out;
}

LatentVolume encode_masked_video(const VideoClip& clip, const MaskSequence& masks,
                                 const LatentCodec& codec) {
    VideoClip masked = apply_mask(clip, masks, 0.0f);
    return pixel_to_latent(masked, codec);
}

ConditionBundle drop_conditions(const ConditionBundle& bundle, double p_audio, double p_ref,
                                Rng& rng) {
    require(p_audio >= 0 && p_audio <= 1 && p_ref >= 0 && p_ref <= 1, ErrorCode::ConfigMismatch,
            "drop probabilities must be in [0,1]");
    // two independent draws; audio drop forces the reference drop
    bool drop_audio = rng.uniform() < p_audio;
    bool drop_ref = rng.uniform() < p_ref || drop_audio;
    ConditionBundle out = bundle;
    if (drop_audio) {
        out.audio.per_frame.fill(0.0f);
        out.audio.zeroed = true;
    }
    if (drop_ref) {
        for (Tensor& level : out.id_features.levels) {
            level.fill(0.0f);
        }
        out.id_features.zeroed = true;
    }
    return out;
}

}  // namespace lipsync
