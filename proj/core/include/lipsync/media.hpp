#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lipsync/tensor.hpp"

namespace lipsync {

struct AudioTrack {
    std::vector<float> samples;
    double sample_rate = 0.0;

    static AudioTrack create(std::vector<float> samples, double sample_rate);
    double duration() const {
        return sample_rate > 0 ? double(samples.size()) / sample_rate : 0.0;
    }
};

// Frame tensor [F, C, H, W] with values in [0,1], plus frame rate and an
// optional time-aligned audio track. The unit every pipeline stage consumes.
struct VideoClip {
    Tensor frames;  // [F, C, H, W]
    double fps = 0.0;
    std::optional<AudioTrack> audio;

    static VideoClip create(Tensor frames, double fps,
                            std::optional<AudioTrack> audio = std::nullopt);

    int64_t frame_count() const { return frames.dim(0); }
    int64_t channels() const { return frames.dim(1); }
    int64_t height() const { return frames.dim(2); }
    int64_t width() const { return frames.dim(3); }
    double duration() const { return fps > 0 ? double(frame_count()) / fps : 0.0; }

    Tensor frame(int64_t f) const;  // [1, C, H, W]
};

// Axis-aligned box in pixel coordinates, kept real-valued; rounding to the
// pixel grid happens at rasterization time.
struct BoundingBox {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double area() const { return width() * height(); }
    double center_x() const { return 0.5 * (x0 + x1); }
    double center_y() const { return 0.5 * (y0 + y1); }
    bool valid() const { return x0 < x1 && y0 < y1; }

    BoundingBox clamped(int64_t frame_w, int64_t frame_h) const;
    BoundingBox expanded(double ratio) const;  // ratio of width/height added per side
    BoundingBox dilated(double px) const;
};

BoundingBox union_rect(const BoundingBox& a, const BoundingBox& b);

struct Point2 {
    double x = 0, y = 0;
};

// Per-frame landmark sets; a frame without a detection is MISSING (nullopt).
struct LandmarkSequence {
    std::vector<std::optional<std::vector<Point2>>> points;

    size_t size() const { return points.size(); }
};

LandmarkSequence load_landmarks(const std::filesystem::path& path);
void save_landmarks(const LandmarkSequence& seq, const std::filesystem::path& path);

// Video I/O. A directory is read as the exchange format (numbered PNG frames
// plus a clip.json sidecar {fps, audio_path}); anything else goes through the
// host media library.
VideoClip load_video(const std::filesystem::path& path);
void save_video(const VideoClip& clip, const std::filesystem::path& dir);

// Single image as a one-frame tensor [1, C, H, W].
Tensor load_image(const std::filesystem::path& path);
void save_image(const Tensor& frame, const std::filesystem::path& path);

AudioTrack load_wav(const std::filesystem::path& path);
void save_wav(const AudioTrack& track, const std::filesystem::path& path);

AudioTrack resample_audio(const AudioTrack& track, double target_rate);

// Bilinear resize over [F, C, H, W]; an identity-size resize is an exact copy.
Tensor resize_bilinear(const Tensor& frames, int64_t out_h, int64_t out_w);

// Integer-rect crop of every frame.
Tensor crop_frames(const Tensor& frames, int64_t x0, int64_t y0, int64_t x1, int64_t y1);

}  // namespace lipsync
