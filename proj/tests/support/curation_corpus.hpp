#pragma once

// Engineered curation corpus: each failing clip trips exactly one filter at
// its Appendix-style threshold (face presence, 8-frame gap, 228x228 gate,
// sharpness, 2 s gate, audio alignment), plus an all-pass clip and a clip
// whose face jumps mid-stream to force a jitter cut.

#include <filesystem>
#include <string>
#include <vector>

#include "lipsync/media.hpp"

namespace testsupport {

struct CorpusClipSpec {
    std::string name;
    int64_t frames = 75;  // 3 s at 25 fps
    int64_t size = 256;
    double face_side = 240.0;
    bool face_visible = true;
    int64_t gap_start = -1, gap_len = 0;  // frames without a face
    bool blurry = false;
    bool silent = false;
    int64_t jump_at = -1;  // face centre jumps +100 px in x at this frame
};

inline lipsync::VideoClip make_corpus_clip(const CorpusClipSpec& spec) {
    using namespace lipsync;
    int64_t n = spec.size;
    Tensor frames({spec.frames, 3, n, n});
    for (int64_t f = 0; f < spec.frames; ++f) {
        bool visible = spec.face_visible;
        if (spec.gap_start >= 0 && f >= spec.gap_start && f < spec.gap_start + spec.gap_len) {
            visible = false;
        }
        double cx = double(n) / 2.0 + ((spec.jump_at >= 0 && f >= spec.jump_at) ? 100.0 : 0.0);
        double cy = double(n) / 2.0;
        double half = spec.face_side / 2.0;
        for (int64_t y = 0; y < n; ++y) {
            for (int64_t x = 0; x < n; ++x) {
                float v = 0.2f;  // dark background, below the detector threshold
                if (visible) {
                    if (spec.blurry) {
                        // wide gaussian blob; bright core > 240 px across but
                        // with no sharp edges anywhere
                        double dx = double(x) - cx, dy = double(y) - cy;
                        double sigma = spec.face_side / 1.44;
                        v = float(0.2 + 0.65 * std::exp(-(dx * dx + dy * dy) /
                                                        (2.0 * sigma * sigma)));
                    } else if (std::abs(double(x) - cx) < half &&
                               std::abs(double(y) - cy) < half) {
                        v = 0.85f;
                        // hard-edged "eyes" keep the sharpness proxy high
                        if (y > cy - half / 2 && y < cy - half / 2 + 8 &&
                            (std::abs(double(x) - (cx - half / 2)) < 6 ||
                             std::abs(double(x) - (cx + half / 2)) < 6)) {
                            v = 0.75f;
                        }
                    }
                }
                frames.at4(f, 0, y, x) = v;
                frames.at4(f, 1, y, x) = v;
                frames.at4(f, 2, y, x) = v * 0.9f;
            }
        }
    }
    double seconds = double(spec.frames) / 25.0;
    auto samples = static_cast<int64_t>(std::llround(seconds * 16000.0));
    std::vector<float> audio(static_cast<size_t>(samples), 0.0f);
    if (!spec.silent) {
        for (int64_t i = 0; i < samples; ++i) {
            audio[static_cast<size_t>(i)] =
                0.4f * float(std::sin(2.0 * M_PI * 180.0 * double(i) / 16000.0));
        }
    }
    return VideoClip::create(std::move(frames), 25.0,
                             AudioTrack::create(std::move(audio), 16000.0));
}

struct CorpusPaths {
    std::filesystem::path root;
    std::vector<std::filesystem::path> failing;  // six clips, one per filter
    std::filesystem::path all_pass;
    std::filesystem::path jitter;
};

inline CorpusPaths build_curation_corpus(const std::filesystem::path& root) {
    using namespace lipsync;
    std::filesystem::remove_all(root);
    std::filesystem::create_directories(root);
    CorpusPaths paths;
    paths.root = root;

    auto emit = [&](const CorpusClipSpec& spec) {
        std::filesystem::path dir = root / spec.name;
        save_video(make_corpus_clip(spec), dir);
        return dir;
    };

    paths.failing.push_back(emit({.name = "no_face", .face_visible = false}));
    paths.failing.push_back(emit({.name = "gap_fail", .gap_start = 20, .gap_len = 9}));
    paths.failing.push_back(emit({.name = "small_face", .face_side = 200.0}));
    paths.failing.push_back(emit({.name = "blurry", .blurry = true}));
    paths.failing.push_back(emit({.name = "too_short", .frames = 40}));
    paths.failing.push_back(emit({.name = "silent", .silent = true}));
    paths.all_pass = emit({.name = "all_pass"});
    paths.jitter = emit({.name = "jittery", .frames = 110, .jump_at = 55});
    return paths;
}

}  // namespace testsupport
