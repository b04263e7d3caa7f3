#pragma once

#include <utility>
#include <vector>

#include "lipsync/conditions.hpp"
#include "lipsync/diffusion.hpp"
#include "lipsync/training.hpp"

namespace lipsync {

struct InferenceConfig {
    int64_t segment_len = 16;
    int64_t overlap = 4;
    double guidance_scale = 3.0;
    int steps = 15;
    double bbox_expand_ratio = 0.4;
    double bbox_smooth_alpha = 0.75;
    double dilation_px = 4.0;
    int64_t junction_smooth_frames = 3;
    uint64_t seed = 0;
    bool ref_first_frame = false;  // default draws the reference frame at random
    double sigma_data = 0.5;
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    double rho = 7.0;
    double pad_ratio = 0.25;
    int max_landmark_gap = 8;

    void validate() const;
    NoiseSchedule schedule() const { return NoiseSchedule{sigma_min, sigma_max, rho, steps}; }
};

// Palindromic frame index map: forward, reverse, forward, ... with endpoints
// duplicated at each junction.
std::vector<int64_t> palindrome_indices(int64_t source_frames, int64_t target_frames);

// Standardize the clip to the audio duration: truncate when the audio is
// shorter, extend forward-and-reverse with a linear cross-fade around each
// junction when it is longer. The returned clip carries the audio.
VideoClip match_duration(const VideoClip& video, const AudioTrack& audio,
                         int64_t junction_smooth_frames = 3);

// Overlapping [start, end) windows with stride segment_len - overlap; the last
// window is right-aligned so the sequence is covered exactly.
std::vector<std::pair<int64_t, int64_t>> plan_segments(int64_t frames, int64_t segment_len,
                                                       int64_t overlap);

// Per-frame conditioning for segmented sampling.
struct SegmentInputs {
    Tensor audio_windows;            // [F, 2k+1, D_a]
    Tensor masked_latents;           // [F, C, h, w]
    std::vector<Tensor> id_levels;   // shared across all frames
    int64_t latent_scale = 1;
};

// Per-window sampling with linear-ramp blending of the overlaps in latent
// space. Initial noise is drawn once for the full sequence and sliced per
// window, so a frame-local denoiser gives outputs identical to a single pass.
LatentVolume run_segments(const SegmentInputs& inputs, DenoisingNetwork& net,
                          const std::vector<std::pair<int64_t, int64_t>>& plan,
                          const InferenceConfig& cfg, Rng& rng);

// Normalized blend weight of `plan[window]` at absolute frame index `frame`.
double segment_blend_weight(const std::vector<std::pair<int64_t, int64_t>>& plan, size_t window,
                            int64_t frame, int64_t overlap);

// Paste the generated face back into the source. The paste region per frame
// is the bounding rectangle of the dilated source and generated boxes;
// everything outside it is the source, bit-exactly.
VideoClip composite(const VideoClip& source, const VideoClip& generated_face,
                    const std::vector<BoundingBox>& src_boxes,
                    const std::vector<BoundingBox>& gen_boxes, double dilation_px);

// Everything the end-to-end pipeline needs from a training run.
struct InferenceAssets {
    UNet* net = nullptr;
    IdGuider* guider = nullptr;
    const LatentCodec* codec = nullptr;
    const SpeechFeatureExtractor* extractor = nullptr;
    int64_t resolution = 64;
};

// Duration matching, face tracking and crop, segmented denoising with
// guidance, and compositing.
VideoClip infer(const VideoClip& source, const AudioTrack& audio,
                const LandmarkSequence& landmarks, const InferenceAssets& assets,
                const InferenceConfig& cfg);

}  // namespace lipsync
