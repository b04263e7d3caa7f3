#pragma once

// The three condition streams of the denoiser: multi-scale identity features
// from the reference image, per-frame windowed audio features, and the
// masked-video latents.

#include <vector>

#include "lipsync/audio_features.hpp"
#include "lipsync/codec.hpp"
#include "lipsync/denoiser.hpp"
#include "lipsync/masking.hpp"
#include "lipsync/unet.hpp"

namespace lipsync {

// One tensor [c_l, h_l, w_l] per UNet down-path level.
struct IdFeaturePyramid {
    std::vector<Tensor> levels;
    bool zeroed = false;
};

// Per video frame, its window of audio embeddings [F, 2k+1, D_a]; rows beyond
// the sequence boundary are exact zeros.
struct AudioFeatureWindowed {
    Tensor per_frame;
    int64_t k = 0;
    bool zeroed = false;
};

struct ConditionBundle {
    IdFeaturePyramid id_features;
    AudioFeatureWindowed audio;
    LatentVolume masked_latents;
};

ConditionVars to_condition_vars(const ConditionBundle& bundle);

struct IdGuiderConfig {
    std::vector<int64_t> downsampler_channels{32, 64, 128, 64};
    std::vector<int64_t> level_channels{32, 64};  // mirrors the UNet down path
    int res_blocks_per_level = 1;
    int64_t pixel_scale = 1;   // total downsampler stride == codec scale
    int64_t input_channels = 4;  // image channels + indicator
    int norm_groups = 8;

    void validate() const;
    int levels() const { return static_cast<int>(level_channels.size()); }
    // Closed-form trainable parameter count for this configuration.
    int64_t parameter_count() const;

    static IdGuiderConfig for_unet(const UNetConfig& unet, int64_t codec_scale,
                                   int64_t image_channels = 3);
};

// Guider preset mirroring the full-scale UNet; ~98M trainable parameters.
IdGuiderConfig full_scale_guider_config();

// Pure-convolutional reference-image encoder: a strided downsampler aligning
// pixel space with the latent grid, then per-level 2D ResBlocks mirroring the
// UNet down path. No timestep conditioning anywhere, so the pyramid is
// computed once per clip and reused across denoising steps. Level taps are
// zero-initialized 1x1 convs: residual injection starts as a no-op.
template <typename T>
class IdGuiderT {
public:
    IdGuiderT(IdGuiderConfig config, uint64_t seed) : config_(std::move(config)) {
        config_.validate();
        Rng rng(seed ^ 0x1d6u);
        int64_t c_prev = config_.input_channels;
        int64_t remaining_stride = config_.pixel_scale;
        for (int64_t c : config_.downsampler_channels) {
            int64_t stride = remaining_stride > 1 ? 2 : 1;
            remaining_stride = std::max<int64_t>(1, remaining_stride / 2);
            down_convs_.emplace_back(c_prev, c, 3, stride, 1, rng);
            c_prev = c;
        }
        entry_ = nn::Conv2dT<T>(c_prev, config_.level_channels[0], 3, 1, 1, rng);
        for (int l = 0; l < config_.levels(); ++l) {
            int64_t c = config_.level_channels[static_cast<size_t>(l)];
            std::vector<unet_detail::ResBlockT<T>> blocks;
            for (int b = 0; b < config_.res_blocks_per_level; ++b) {
                blocks.emplace_back(c, c, 0, config_.norm_groups, rng);
            }
            trunk_.push_back(std::move(blocks));
            taps_.emplace_back(c, c, 1, 1, 0, rng, /*zero_init=*/true);
            if (l + 1 < config_.levels()) {
                transitions_.emplace_back(c, config_.level_channels[static_cast<size_t>(l + 1)], 3,
                                          2, 1, rng);
            }
        }
    }

    const IdGuiderConfig& config() const { return config_; }

    // ref_with_mask: [1, C+1, H_px, W_px] -> one Var per level [1, c_l, h_l, w_l]
    std::vector<VarT<T>> forward(const VarT<T>& ref_with_mask) const {
        require(ref_with_mask.shape().size() == 4 &&
                    ref_with_mask.shape()[1] == config_.input_channels,
                ErrorCode::ShapeMismatch,
                "guider input must be [1," + std::to_string(config_.input_channels) + ",H,W]");
        VarT<T> x = ref_with_mask;
        for (const auto& conv : down_convs_) {
            x = ag::silu(conv.forward(x));
        }
        x = entry_.forward(x);
        std::vector<VarT<T>> pyramid;
        for (int l = 0; l < config_.levels(); ++l) {
            for (const auto& block : trunk_[static_cast<size_t>(l)]) {
                x = block.forward(x, VarT<T>());
            }
            pyramid.push_back(taps_[static_cast<size_t>(l)].forward(x));
            if (l + 1 < config_.levels()) {
                x = transitions_[static_cast<size_t>(l)].forward(x);
            }
        }
        return pyramid;
    }

    nn::ParamList<T> parameters() {
        nn::ParamList<T> out;
        for (size_t i = 0; i < down_convs_.size(); ++i) {
            down_convs_[i].visit("guider.down." + std::to_string(i), out);
        }
        entry_.visit("guider.entry", out);
        for (size_t l = 0; l < trunk_.size(); ++l) {
            for (size_t b = 0; b < trunk_[l].size(); ++b) {
                trunk_[l][b].visit("guider.trunk." + std::to_string(l) + "." + std::to_string(b),
                                   out);
            }
            taps_[l].visit("guider.tap." + std::to_string(l), out);
        }
        for (size_t l = 0; l < transitions_.size(); ++l) {
            transitions_[l].visit("guider.transition." + std::to_string(l), out);
        }
        return out;
    }

    int64_t parameter_count() { return nn::parameter_count(parameters()); }

private:
    IdGuiderConfig config_;
    std::vector<nn::Conv2dT<T>> down_convs_;
    nn::Conv2dT<T> entry_;
    std::vector<std::vector<unet_detail::ResBlockT<T>>> trunk_;
    std::vector<nn::Conv2dT<T>> taps_;
    std::vector<nn::Conv2dT<T>> transitions_;
};

using IdGuider = IdGuiderT<float>;

// Concat the lip mask as an indicator channel with the reference image and run
// the guider. The pyramid is cache-friendly by construction: it depends only
// on (ref_image, lip_mask), never on the denoising step.
IdFeaturePyramid encode_identity(const Tensor& ref_image, const Tensor& lip_mask,
                                 IdGuider& guider);

// Row t carries [x_{t-k}, ..., x_t, ..., x_{t+k}]; out-of-range rows are
// exact zeros.
AudioFeatureWindowed window_audio(const Tensor& features, int64_t k);

// Mask in pixel space (fill 0), then encode; concat with noise latents later
// doubles the channel count (8 at full scale).
LatentVolume encode_masked_video(const VideoClip& clip, const MaskSequence& masks,
                                 const LatentCodec& codec);

// Training-time condition masking: audio dropped with p_audio, reference with
// p_ref (independent draw), and dropping audio always forces the reference
// drop. Dropped streams become zeros; masked latents are never touched.
ConditionBundle drop_conditions(const ConditionBundle& bundle, double p_audio, double p_ref,
                                Rng& rng);

}  // namespace lipsync
