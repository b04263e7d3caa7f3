#pragma once

// The conditional denoising UNet: 2x-latent channel input (noisy latents
// concatenated with masked-video latents), blocks of ResNet / Self-Attention /
// Audio Cross-Attention / Temporal Attention, identity residuals injected on
// the down path, audio cross-attention on both the down and up paths.

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lipsync/denoiser.hpp"
#include "lipsync/nn.hpp"

namespace lipsync {

struct UNetConfig {
    std::vector<int64_t> down_channels{32, 64};
    int num_res_blocks = 1;
    int attn_heads = 2;
    int64_t attn_max_resolution = 32;  // self-attention where min(h,w) <= this
    bool temporal_attention = true;
    int64_t latent_channels = 4;
    int64_t audio_dim = 64;
    int64_t audio_window = 2;  // context radius k
    int64_t time_embed_dim = 64;
    int norm_groups = 8;

    void validate() const;
    int levels() const { return static_cast<int>(down_channels.size()); }
};

// SVD-scale preset; expressible but far beyond desk-scale training.
UNetConfig full_scale_unet_config();

namespace unet_detail {

template <typename T>
struct ResBlockT {
    nn::GroupNormT<T> norm1;
    nn::Conv2dT<T> conv1;
    nn::LinearT<T> time_proj;  // undefined when temb_dim == 0
    bool has_time = false;
    nn::GroupNormT<T> norm2;
    nn::Conv2dT<T> conv2;
    nn::Conv2dT<T> skip;  // 1x1 when c_in != c_out
    bool has_skip = false;

    ResBlockT() = default;

    ResBlockT(int64_t c_in, int64_t c_out, int64_t temb_dim, int groups, Rng& rng) {
        norm1 = nn::GroupNormT<T>(c_in, groups);
        conv1 = nn::Conv2dT<T>(c_in, c_out, 3, 1, 1, rng);
        if (temb_dim > 0) {
            time_proj = nn::LinearT<T>(temb_dim, c_out, rng);
            has_time = true;
        }
        norm2 = nn::GroupNormT<T>(c_out, groups);
        conv2 = nn::Conv2dT<T>(c_out, c_out, 3, 1, 1, rng);
        if (c_in != c_out) {
            skip = nn::Conv2dT<T>(c_in, c_out, 1, 1, 0, rng);
            has_skip = true;
        }
    }

    VarT<T> forward(const VarT<T>& x, const VarT<T>& temb) const {
        VarT<T> h = conv1.forward(ag::silu(norm1.forward(x)));
        if (has_time && temb.defined()) {
            VarT<T> bias = time_proj.forward(ag::silu(temb));  // [c_out]
            h = ag::add_channel_bias(h, bias);
        }
        h = conv2.forward(ag::silu(norm2.forward(h)));
        VarT<T> base = has_skip ? skip.forward(x) : x;
        return ag::add(h, base);
    }

    void visit(const std::string& p, nn::ParamList<T>& out) {
        norm1.visit(p + ".norm1", out);
        conv1.visit(p + ".conv1", out);
        if (has_time) {
            time_proj.visit(p + ".time_proj", out);
        }
        norm2.visit(p + ".norm2", out);
        conv2.visit(p + ".conv2", out);
        if (has_skip) {
            skip.visit(p + ".skip", out);
        }
    }
};

// Spatial tokens attend within their own frame.
template <typename T>
struct SelfAttentionT {
    nn::LayerNormT<T> norm;
    nn::LinearT<T> q, k, v, out;
    int heads = 1;

    SelfAttentionT() = default;

    SelfAttentionT(int64_t c, int heads_, Rng& rng)
        : norm(c), q(c, c, rng), k(c, c, rng), v(c, c, rng), out(c, c, rng), heads(heads_) {}

    VarT<T> forward(const VarT<T>& x, std::vector<TensorT<T>>* capture) const {
        int64_t f = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
        VarT<T> tokens = ag::reshape(ag::permute(ag::reshape(x, {f, c, h * w}), {0, 2, 1}),
                                     {f, h * w, c});
        VarT<T> n = norm.forward(tokens);
        TensorT<T> maps;
        VarT<T> y = nn::attention(q.forward(n), k.forward(n), v.forward(n), heads,
                                  capture ? &maps : nullptr);
        if (capture) {
            capture->push_back(std::move(maps));
        }
        y = out.forward(y);
        tokens = ag::add(tokens, y);
        return ag::reshape(ag::permute(ag::reshape(tokens, {f, h * w, c}), {0, 2, 1}),
                           {f, c, h, w});
    }

    void visit(const std::string& p, nn::ParamList<T>& outp) {
        norm.visit(p + ".norm", outp);
        q.visit(p + ".q", outp);
        k.visit(p + ".k", outp);
        v.visit(p + ".v", outp);
        out.visit(p + ".out", outp);
    }
};

// Noisy spatial tokens are the queries; the frame's windowed audio features
// are keys and values.
template <typename T>
struct AudioCrossAttentionT {
    nn::LayerNormT<T> norm;
    nn::LinearT<T> q, k, v, out;
    int heads = 1;

    AudioCrossAttentionT() = default;

    AudioCrossAttentionT(int64_t c, int64_t audio_dim, int heads_, Rng& rng)
        : norm(c), q(c, c, rng), k(audio_dim, c, rng), v(audio_dim, c, rng), out(c, c, rng),
          heads(heads_) {}

    VarT<T> forward(const VarT<T>& x, const VarT<T>& audio,
                    std::vector<TensorT<T>>* capture) const {
        int64_t f = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
        VarT<T> tokens = ag::reshape(ag::permute(ag::reshape(x, {f, c, h * w}), {0, 2, 1}),
                                     {f, h * w, c});
        VarT<T> n = norm.forward(tokens);
        TensorT<T> maps;
        VarT<T> y = nn::attention(q.forward(n), k.forward(audio), v.forward(audio), heads,
                                  capture ? &maps : nullptr);
        if (capture) {
            capture->push_back(std::move(maps));
        }
        y = out.forward(y);
        tokens = ag::add(tokens, y);
        return ag::reshape(ag::permute(ag::reshape(tokens, {f, h * w, c}), {0, 2, 1}),
                           {f, c, h, w});
    }

    void visit(const std::string& p, nn::ParamList<T>& outp) {
        norm.visit(p + ".norm", outp);
        q.visit(p + ".q", outp);
        k.visit(p + ".k", outp);
        v.visit(p + ".v", outp);
        out.visit(p + ".out", outp);
    }
};

// Per-spatial-location attention across the F frames.
template <typename T>
struct TemporalAttentionT {
    nn::LayerNormT<T> norm;
    nn::LinearT<T> q, k, v, out;
    int heads = 1;

    TemporalAttentionT() = default;

    TemporalAttentionT(int64_t c, int heads_, Rng& rng)
        : norm(c), q(c, c, rng), k(c, c, rng), v(c, c, rng), out(c, c, rng), heads(heads_) {}

    VarT<T> forward(const VarT<T>& x, std::vector<TensorT<T>>* capture) const {
        int64_t f = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
        // [F, C, HW] -> [HW, F, C]
        VarT<T> tokens = ag::permute(ag::reshape(x, {f, c, h * w}), {2, 0, 1});
        VarT<T> n = norm.forward(tokens);
        TensorT<T> maps;
        VarT<T> y = nn::attention(q.forward(n), k.forward(n), v.forward(n), heads,
                                  capture ? &maps : nullptr);
        if (capture) {
            capture->push_back(std::move(maps));
        }
        y = out.forward(y);
        tokens = ag::add(tokens, y);
        return ag::reshape(ag::permute(tokens, {1, 2, 0}), {f, c, h, w});
    }

    void visit(const std::string& p, nn::ParamList<T>& outp) {
        norm.visit(p + ".norm", outp);
        q.visit(p + ".q", outp);
        k.visit(p + ".k", outp);
        v.visit(p + ".v", outp);
        out.visit(p + ".out", outp);
    }
};

// One Fig-2(b)-ordered block: ResNet, Self-Attn, Audio Cross-Attn, Temporal.
template <typename T>
struct UNetBlockT {
    ResBlockT<T> res;
    std::optional<SelfAttentionT<T>> self_attn;
    AudioCrossAttentionT<T> audio_attn;
    std::optional<TemporalAttentionT<T>> temporal;

    void visit(const std::string& p, nn::ParamList<T>& out) {
        res.visit(p + ".res", out);
        if (self_attn) {
            self_attn->visit(p + ".self_attn", out);
        }
        audio_attn.visit(p + ".audio_attn", out);
        if (temporal) {
            temporal->visit(p + ".temporal", out);
        }
    }
};

}  // namespace unet_detail

template <typename T>
class UNetT : public DenoisingNetworkT<T> {
public:
    UNetT(UNetConfig config, uint64_t seed) : config_(std::move(config)) {
        config_.validate();
        Rng rng(seed ^ 0xd1f0u);
        int levels = config_.levels();
        int64_t c0 = config_.down_channels[0];
        stem_ = nn::Conv2dT<T>(2 * config_.latent_channels, c0, 3, 1, 1, rng);
        time_fc1_ = nn::LinearT<T>(config_.time_embed_dim, config_.time_embed_dim, rng);
        time_fc2_ = nn::LinearT<T>(config_.time_embed_dim, config_.time_embed_dim, rng);

        down_.resize(static_cast<size_t>(levels));
        for (int l = 0; l < levels; ++l) {
            int64_t c = config_.down_channels[static_cast<size_t>(l)];
            for (int b = 0; b < config_.num_res_blocks; ++b) {
                down_[static_cast<size_t>(l)].push_back(make_block(c, c, rng));
            }
            if (l + 1 < levels) {
                downsample_.emplace_back(c, config_.down_channels[static_cast<size_t>(l + 1)], 3,
                                         2, 1, rng);
            }
        }
        int64_t c_mid = config_.down_channels.back();
        mid_res1_ = unet_detail::ResBlockT<T>(c_mid, c_mid, config_.time_embed_dim,
                                              config_.norm_groups, rng);
        mid_attn_.emplace(c_mid, config_.attn_heads, rng);
        mid_res2_ = unet_detail::ResBlockT<T>(c_mid, c_mid, config_.time_embed_dim,
                                              config_.norm_groups, rng);

        for (int l = levels - 2; l >= 0; --l) {
            int64_t c = config_.down_channels[static_cast<size_t>(l)];
            int64_t c_deeper = config_.down_channels[static_cast<size_t>(l + 1)];
            upsample_.emplace_back(c_deeper, c, 3, 1, 1, rng);
            std::vector<unet_detail::UNetBlockT<T>> blocks;
            blocks.push_back(make_block(2 * c, c, rng));  // consumes the skip concat
            for (int b = 1; b < config_.num_res_blocks; ++b) {
                blocks.push_back(make_block(c, c, rng));
            }
            up_.push_back(std::move(blocks));
        }

        // Not zero-initialized: a zero output projection would starve every
        // upstream block of gradient on the first step.
        out_norm_ = nn::GroupNormT<T>(c0, config_.norm_groups);
        out_conv_ = nn::Conv2dT<T>(c0, config_.latent_channels, 3, 1, 1, rng);
    }

    const UNetConfig& config() const { return config_; }

    // Channel widths the ID pyramid must match, one per down-path level.
    std::vector<int64_t> id_level_channels() const { return config_.down_channels; }

    void set_attention_capture(std::vector<TensorT<T>>* sink) { attn_capture_ = sink; }

    VarT<T> forward(const VarT<T>& scaled_noisy, const ConditionVarsT<T>& cond,
                    T c_noise) override {
        const Shape& s = scaled_noisy.shape();
        require(s.size() == 4, ErrorCode::ShapeMismatch, "latents must be [F,C,h,w]");
        int64_t frames = s[0], h = s[2], w = s[3];
        require(s[1] == config_.latent_channels, ErrorCode::ShapeMismatch,
                "latent channels " + std::to_string(s[1]) + " != configured " +
                    std::to_string(config_.latent_channels));
        require(cond.masked_latents.defined() && cond.masked_latents.shape() == s,
                ErrorCode::ShapeMismatch, "masked-video latents must match noisy latents");
        require(cond.audio.defined(), ErrorCode::ShapeMismatch, "audio features missing");
        Shape audio_shape{frames, 2 * config_.audio_window + 1, config_.audio_dim};
        require(cond.audio.shape() == audio_shape, ErrorCode::ShapeMismatch,
                "audio windows must be " + shape_str(audio_shape) + ", got " +
                    shape_str(cond.audio.shape()));
        int levels = config_.levels();
        int64_t div = int64_t(1) << (levels - 1);
        require(h % div == 0 && w % div == 0, ErrorCode::ShapeMismatch,
                "latent size must be divisible by 2^(levels-1)");
        bool use_id = !cond.id_levels.empty();
        if (use_id) {
            require(static_cast<int>(cond.id_levels.size()) == levels, ErrorCode::ConfigMismatch,
                    "ID pyramid must have one level per UNet down level");
            for (int l = 0; l < levels; ++l) {
                Shape expect{config_.down_channels[static_cast<size_t>(l)], h >> l, w >> l};
                require(cond.id_levels[static_cast<size_t>(l)].shape() == expect,
                        ErrorCode::ConfigMismatch,
                        "ID pyramid level " + std::to_string(l) + " must be " +
                            shape_str(expect) + ", got " +
                            shape_str(cond.id_levels[static_cast<size_t>(l)].shape()));
            }
        }

        VarT<T> temb = VarT<T>::constant(
            nn::sinusoidal_embedding<T>(double(c_noise), config_.time_embed_dim));
        temb = time_fc2_.forward(ag::silu(time_fc1_.forward(temb)));

        VarT<T> x = ag::concat<T>({scaled_noisy, cond.masked_latents}, 1);
        x = stem_.forward(x);

        std::vector<VarT<T>> skips;
        for (int l = 0; l < levels; ++l) {
            for (const auto& block : down_[static_cast<size_t>(l)]) {
                x = block.res.forward(x, temb);
                if (use_id) {
                    x = ag::add_frame_broadcast(x, cond.id_levels[static_cast<size_t>(l)]);
                }
                x = run_attns(block, x, cond.audio);
            }
            if (l + 1 < levels) {
                skips.push_back(x);
                x = downsample_[static_cast<size_t>(l)].forward(x);
            }
        }

        x = mid_res1_.forward(x, temb);
        if (attn_allowed(x)) {
            x = mid_attn_->forward(x, attn_capture_);
        }
        x = mid_res2_.forward(x, temb);

        for (size_t ui = 0; ui < up_.size(); ++ui) {
            x = ag::upsample_nearest2x(x);
            x = upsample_[ui].forward(x);
            x = ag::concat<T>({x, skips.back()}, 1);
            skips.pop_back();
            for (const auto& block : up_[ui]) {
                x = block.res.forward(x, temb);
                x = run_attns(block, x, cond.audio);
            }
        }

        x = ag::silu(out_norm_.forward(x));
        return out_conv_.forward(x);
    }

    nn::ParamList<T> parameters() {
        nn::ParamList<T> out;
        stem_.visit("stem", out);
        time_fc1_.visit("time_fc1", out);
        time_fc2_.visit("time_fc2", out);
        for (size_t l = 0; l < down_.size(); ++l) {
            for (size_t b = 0; b < down_[l].size(); ++b) {
                down_[l][b].visit("down." + std::to_string(l) + "." + std::to_string(b), out);
            }
        }
        for (size_t l = 0; l < downsample_.size(); ++l) {
            downsample_[l].visit("downsample." + std::to_string(l), out);
        }
        mid_res1_.visit("mid.res1", out);
        if (mid_attn_) {
            mid_attn_->visit("mid.attn", out);
        }
        mid_res2_.visit("mid.res2", out);
        for (size_t l = 0; l < up_.size(); ++l) {
            upsample_[l].visit("upsample." + std::to_string(l), out);
            for (size_t b = 0; b < up_[l].size(); ++b) {
                up_[l][b].visit("up." + std::to_string(l) + "." + std::to_string(b), out);
            }
        }
        out_norm_.visit("out_norm", out);
        out_conv_.visit("out_conv", out);
        return out;
    }

    int64_t parameter_count() const override {
        return nn::parameter_count(const_cast<UNetT*>(this)->parameters());
    }

private:
    unet_detail::UNetBlockT<T> make_block(int64_t c_in, int64_t c_out, Rng& rng) {
        unet_detail::UNetBlockT<T> block;
        block.res = unet_detail::ResBlockT<T>(c_in, c_out, config_.time_embed_dim,
                                              config_.norm_groups, rng);
        block.self_attn.emplace(c_out, config_.attn_heads, rng);
        block.audio_attn =
            unet_detail::AudioCrossAttentionT<T>(c_out, config_.audio_dim, config_.attn_heads, rng);
        if (config_.temporal_attention) {
            block.temporal.emplace(c_out, config_.attn_heads, rng);
        }
        return block;
    }

    bool attn_allowed(const VarT<T>& x) const {
        return std::min(x.shape()[2], x.shape()[3]) <= config_.attn_max_resolution;
    }

    VarT<T> run_attns(const unet_detail::UNetBlockT<T>& block, VarT<T> x,
                      const VarT<T>& audio) const {
        if (block.self_attn && attn_allowed(x)) {
            x = block.self_attn->forward(x, attn_capture_);
        }
        x = block.audio_attn.forward(x, audio, attn_capture_);
        if (block.temporal) {
            x = block.temporal->forward(x, attn_capture_);
        }
        return x;
    }

    UNetConfig config_;
    nn::Conv2dT<T> stem_;
    nn::LinearT<T> time_fc1_, time_fc2_;
    std::vector<std::vector<unet_detail::UNetBlockT<T>>> down_;
    std::vector<nn::Conv2dT<T>> downsample_;
    unet_detail::ResBlockT<T> mid_res1_, mid_res2_;
    std::optional<unet_detail::SelfAttentionT<T>> mid_attn_;
    std::vector<nn::Conv2dT<T>> upsample_;
    std::vector<std::vector<unet_detail::UNetBlockT<T>>> up_;
    nn::GroupNormT<T> out_norm_;
    nn::Conv2dT<T> out_conv_;
    std::vector<TensorT<T>>* attn_capture_ = nullptr;
};

using UNet = UNetT<float>;

template <typename T>
int64_t count_parameters(const DenoisingNetworkT<T>& net) {
    return net.parameter_count();
}

}  // namespace lipsync
