#pragma once

// JSON (de)serialization for config structs. Internal: keeps the JSON
// dependency out of the public headers.

#include "json.hpp"

#include "lipsync/conditions.hpp"
#include "lipsync/training.hpp"
#include "lipsync/unet.hpp"

namespace lipsync {

inline void to_json(nlohmann::json& j, const CodecSpec& c) {
    j = nlohmann::json{{"kind", c.kind},
                       {"scale", c.scale},
                       {"latent_channels", c.latent_channels},
                       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, CodecSpec& c) {
    j.at("kind").get_to(c.kind);
    j.at("scale").get_to(c.scale);
    j.at("latent_channels").get_to(c.latent_channels);
    j.at("seed").get_to(c.seed);
}

inline void to_json(nlohmann::json& j, const UNetConfig& c) {
    j = nlohmann::json{{"down_channels", c.down_channels},
                       {"num_res_blocks", c.num_res_blocks},
                       {"attn_heads", c.attn_heads},
                       {"attn_max_resolution", c.attn_max_resolution},
                       {"temporal_attention", c.temporal_attention},
                       {"latent_channels", c.latent_channels},
                       {"audio_dim", c.audio_dim},
                       {"audio_window", c.audio_window},
                       {"time_embed_dim", c.time_embed_dim},
                       {"norm_groups", c.norm_groups}};
}

inline void from_json(const nlohmann::json& j, UNetConfig& c) {
    j.at("down_channels").get_to(c.down_channels);
    j.at("num_res_blocks").get_to(c.num_res_blocks);
    j.at("attn_heads").get_to(c.attn_heads);
    j.at("attn_max_resolution").get_to(c.attn_max_resolution);
    j.at("temporal_attention").get_to(c.temporal_attention);
    j.at("latent_channels").get_to(c.latent_channels);
    j.at("audio_dim").get_to(c.audio_dim);
    j.at("audio_window").get_to(c.audio_window);
    j.at("time_embed_dim").get_to(c.time_embed_dim);
    j.at("norm_groups").get_to(c.norm_groups);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"frames_per_clip", c.frames_per_clip},
                       {"fps", c.fps},
                       {"resolution", c.resolution},
                       {"lr", c.lr},
                       {"batch_size", c.batch_size},
                       {"steps", c.steps},
                       {"p_audio", c.p_audio},
                       {"p_ref", c.p_ref},
                       {"seed", c.seed},
                       {"pad_ratio", c.pad_ratio},
                       {"smooth_alpha", c.smooth_alpha},
                       {"max_landmark_gap", c.max_landmark_gap},
                       {"sigma_data", c.sigma_data},
                       {"sigma_mean_log", c.sigma_mean_log},
                       {"sigma_std_log", c.sigma_std_log},
                       {"grad_clip", c.grad_clip},
                       {"weight_decay", c.weight_decay}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    j.at("frames_per_clip").get_to(c.frames_per_clip);
    j.at("fps").get_to(c.fps);
    j.at("resolution").get_to(c.resolution);
    j.at("lr").get_to(c.lr);
    j.at("batch_size").get_to(c.batch_size);
    j.at("steps").get_to(c.steps);
    j.at("p_audio").get_to(c.p_audio);
    j.at("p_ref").get_to(c.p_ref);
    j.at("seed").get_to(c.seed);
    j.at("pad_ratio").get_to(c.pad_ratio);
    j.at("smooth_alpha").get_to(c.smooth_alpha);
    j.at("max_landmark_gap").get_to(c.max_landmark_gap);
    j.at("sigma_data").get_to(c.sigma_data);
    j.at("sigma_mean_log").get_to(c.sigma_mean_log);
    j.at("sigma_std_log").get_to(c.sigma_std_log);
    j.at("grad_clip").get_to(c.grad_clip);
    j.at("weight_decay").get_to(c.weight_decay);
}

}  // namespace lipsync
