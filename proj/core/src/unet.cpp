#include "lipsync/unet.hpp"

#include "lipsync/errors.hpp"

namespace lipsync {

void UNetConfig::validate() const {
    require(!down_channels.empty(), ErrorCode::ConfigMismatch, "down_channels must be nonempty");
    for (size_t i = 0; i + 1 < down_channels.size(); ++i) {
        require(down_channels[i] <= down_channels[i + 1], ErrorCode::ConfigMismatch,
                "down_channels must be monotone nondecreasing");
    }
    for (int64_t c : down_channels) {
        require(c >= 1, ErrorCode::ConfigMismatch, "channel counts must be positive");
        require(c % norm_groups == 0, ErrorCode::ConfigMismatch,
                "channels must be divisible by norm_groups");
        require(c % attn_heads == 0, ErrorCode::ConfigMismatch,
                "channels must be divisible by attn_heads");
    }
    require(num_res_blocks >= 1, ErrorCode::ConfigMismatch, "num_res_blocks >= 1");
    require(attn_heads >= 1, ErrorCode::ConfigMismatch, "attn_heads >= 1");
    require(latent_channels >= 1, ErrorCode::ConfigMismatch, "latent_channels >= 1");
    require(audio_dim >= 1, ErrorCode::ConfigMismatch, "audio_dim >= 1");
    require(audio_window >= 0, ErrorCode::ConfigMismatch, "audio_window >= 0");
    require(time_embed_dim >= 2 && time_embed_dim % 2 == 0, ErrorCode::ConfigMismatch,
            "time_embed_dim must be even and >= 2");
    require(norm_groups >= 1, ErrorCode::ConfigMismatch, "norm_groups >= 1");
}

UNetConfig full_scale_unet_config() {
    UNetConfig cfg;
    cfg.down_channels = {320, 640, 1280, 1280};
    cfg.num_res_blocks = 2;
    cfg.attn_heads = 8;
    cfg.attn_max_resolution = 20;
    cfg.temporal_attention = true;
    cfg.latent_channels = 4;
    cfg.audio_dim = 384;
    cfg.audio_window = 2;
    cfg.time_embed_dim = 320;
    cfg.norm_groups = 32;
    return cfg;
}

}  // namespace lipsync
