#pragma once

#include <filesystem>
#include <memory>
#include <vector>

#include "lipsync/conditions.hpp"
#include "lipsync/diffusion.hpp"

namespace lipsync {

struct TrainConfig {
    int64_t frames_per_clip = 16;
    double fps = 25.0;
    int64_t resolution = 64;  // 320 is the full-scale setting
    double lr = 6e-5;
    int64_t batch_size = 1;
    int64_t steps = 200;
    double p_audio = 0.05;
    double p_ref = 0.15;
    uint64_t seed = 0;
    double pad_ratio = 0.25;
    double smooth_alpha = 0.75;
    int max_landmark_gap = 8;
    double sigma_data = 0.5;
    double sigma_mean_log = -1.2;
    double sigma_std_log = 1.2;
    double grad_clip = 1.0;
    double weight_decay = 0.0;

    void validate() const;
};

// One curated clip, fully decoded: frames, landmarks, and the per-frame audio
// embeddings of the whole track.
struct ClipRecord {
    VideoClip clip;
    LandmarkSequence landmarks;
    Tensor audio_features;  // [T, D_a]
};

struct TrainSample {
    VideoClip target_clip;  // the frames_per_clip window
    VideoClip masked_clip;  // apply_mask(target_clip)
    MaskSequence masks;
    Tensor ref_image;     // [1, C, H, W], drawn from the full source video
    Tensor ref_lip_mask;  // [1, 1, H, W]
    AudioFeatureWindowed audio_window;
    int64_t window_start = 0;
    int64_t ref_index = 0;
};

// Contiguous training window plus a reference frame drawn uniformly over the
// whole video. The per-frame audio windows keep context from outside the
// video window when the track provides it.
TrainSample build_sample(const VideoClip& video, const LandmarkSequence& landmarks,
                         const Tensor& audio_features, const TrainConfig& cfg, int64_t audio_k,
                         Rng& rng);

// Dataset manifest: JSON lines {frames_dir, audio_path, landmarks_path, filters_passed}.
struct ManifestEntry {
    std::string frames_dir;
    std::string audio_path;
    std::string landmarks_path;
    bool filters_passed = true;
};

std::vector<ManifestEntry> load_dataset_manifest(const std::filesystem::path& path);
ClipRecord load_clip_record(const ManifestEntry& entry, const SpeechFeatureExtractor& extractor);

struct StepResult {
    double loss = 0.0;
    std::vector<int64_t> sample_ids;
    double grad_norm = 0.0;
};

// Owns the denoising UNet, the ID guider, the shared AdamW state and the RNG
// stream; a checkpoint restores all of them bit-exactly.
class Trainer {
public:
    Trainer(const UNetConfig& unet_cfg, const TrainConfig& train_cfg, const CodecSpec& codec);

    StepResult train_step(const std::vector<ClipRecord>& dataset);

    UNet& net() { return *net_; }
    IdGuider& guider() { return *guider_; }
    const TrainConfig& config() const { return train_cfg_; }
    const UNetConfig& unet_config() const { return unet_cfg_; }
    int64_t step_count() const { return step_; }
    Rng& rng() { return rng_; }

    const LatentCodec& codec() const { return *codec_; }
    const CodecSpec& codec_spec() const { return codec_spec_; }

    void save_checkpoint(const std::filesystem::path& path) const;
    // Rebuilds a trainer (model, guider, optimizer, RNG) from the file alone.
    static std::unique_ptr<Trainer> load_checkpoint(const std::filesystem::path& path);
    // Restores parameters into this trainer; the stored configuration must
    // match exactly.
    void restore_checkpoint(const std::filesystem::path& path);

private:
    TrainSample draw_sample(const std::vector<ClipRecord>& dataset, int64_t* picked_index);

    UNetConfig unet_cfg_;
    TrainConfig train_cfg_;
    CodecSpec codec_spec_;
    std::shared_ptr<const LatentCodec> codec_;
    std::unique_ptr<UNet> net_;
    std::unique_ptr<IdGuider> guider_;
    nn::AdamW opt_;
    Rng rng_;
    int64_t step_ = 0;
};

}  // namespace lipsync
