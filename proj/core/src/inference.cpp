#include "lipsync/inference.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "lipsync/errors.hpp"
#include "lipsync/hashing.hpp"

namespace lipsync {

uint64_t file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::IoFailure, "cannot open " + path.string());
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        h = fnv1a64(buf, size_t(in.gcount()), h);
        if (in.eof()) {
            break;
        }
    }
    return h;
}

void InferenceConfig::validate() const {
    require(segment_len >= 1, ErrorCode::SchemaError, "segment_len must be positive");
    require(overlap > 0 && overlap < segment_len, ErrorCode::SchemaError,
            "need 0 < overlap < segment_len");
    require(steps >= 1, ErrorCode::SchemaError, "steps must be >= 1");
    require(guidance_scale >= 0, ErrorCode::SchemaError, "guidance scale must be >= 0");
    require(bbox_expand_ratio >= 0, ErrorCode::SchemaError, "bbox_expand_ratio must be >= 0");
    require(bbox_smooth_alpha >= 0 && bbox_smooth_alpha <= 1, ErrorCode::SchemaError,
            "bbox_smooth_alpha in [0,1]");
    require(dilation_px >= 0, ErrorCode::SchemaError, "dilation_px must be >= 0");
    require(junction_smooth_frames >= 0, ErrorCode::SchemaError,
            "junction_smooth_frames must be >= 0");
    require(sigma_min > 0 && sigma_min < sigma_max, ErrorCode::SchemaError,
            "need 0 < sigma_min < sigma_max");
    require(pad_ratio >= 0, ErrorCode::SchemaError, "pad_ratio must be >= 0");
}

std::vector<int64_t> palindrome_indices(int64_t source_frames, int64_t target_frames) {
    require(source_frames >= 1, ErrorCode::EmptyVideo, "no source frames");
    std::vector<int64_t> out(static_cast<size_t>(target_frames));
    for (int64_t i = 0; i < target_frames; ++i) {
        int64_t block = i / source_frames;
        int64_t j = i % source_frames;
        out[static_cast<size_t>(i)] = (block % 2 == 0) ? j : source_frames - 1 - j;
    }
    return out;
}

VideoClip match_duration(const VideoClip& video, const AudioTrack& audio,
                         int64_t junction_smooth_frames) {
    require(video.frame_count() >= 1, ErrorCode::EmptyVideo, "empty video");
    require(!audio.samples.empty(), ErrorCode::EmptyVideo, "empty audio");
    auto target = static_cast<int64_t>(std::llround(audio.duration() * video.fps));
    target = std::max<int64_t>(target, 1);
    int64_t source = video.frame_count();
    int64_t chw = video.channels() * video.height() * video.width();

    Tensor out({target, video.channels(), video.height(), video.width()});
    std::vector<int64_t> idx = palindrome_indices(source, target);
    for (int64_t i = 0; i < target; ++i) {
        std::copy(video.frames.data() + idx[size_t(i)] * chw,
                  video.frames.data() + (idx[size_t(i)] + 1) * chw, out.data() + i * chw);
    }
    // linear cross-fade after each junction between the held last frame of the
    // previous block and the mirrored continuation
    int64_t m = junction_smooth_frames;
    for (int64_t p = source; p < target; p += source) {
        const float* held = video.frames.data() + idx[size_t(p - 1)] * chw;
        for (int64_t d = 0; d < m && p + d < target; ++d) {
            float w = float(d + 1) / float(m + 1);
            float* dst = out.data() + (p + d) * chw;
            const float* mirrored = video.frames.data() + idx[size_t(p + d)] * chw;
            for (int64_t i = 0; i < chw; ++i) {
                dst[i] = (1.0f - w) * held[i] + w * mirrored[i];
            }
        }
    }
    return VideoClip::create(std::move(out), video.fps, audio);
}

std::vector<std::pair<int64_t, int64_t>> plan_segments(int64_t frames, int64_t segment_len,
                                                       int64_t overlap) {
    require(overlap > 0 && overlap < segment_len, ErrorCode::SchemaError,
            "need 0 < overlap < segment_len");
    require(frames >= segment_len, ErrorCode::TooShort,
            std::to_string(frames) + " frames < segment length " + std::to_string(segment_len));
    int64_t stride = segment_len - overlap;
    auto count = static_cast<int64_t>(
        std::ceil(double(frames - segment_len) / double(stride))) + 1;
    std::vector<std::pair<int64_t, int64_t>> plan;
    for (int64_t i = 0; i < count; ++i) {
        int64_t start = (i == count - 1) ? frames - segment_len : i * stride;
        plan.emplace_back(start, start + segment_len);
    }
    return plan;
}

namespace {

// Raw (unnormalized) ramp weight of a window at an absolute frame.
double raw_blend_weight(const std::vector<std::pair<int64_t, int64_t>>& plan, size_t window,
                        int64_t frame, int64_t overlap) {
    auto [start, end] = plan[window];
    if (frame < start || frame >= end) {
        return 0.0;
    }
    double w = 1.0;
    if (window > 0) {
        int64_t into = frame - start;  // rising ramp across the first `overlap` frames
        if (into < overlap) {
            w = std::min(w, double(into + 1) / double(overlap + 1));
        }
    }
    if (window + 1 < plan.size()) {
        int64_t from_end = end - 1 - frame;  // falling ramp across the last `overlap` frames
        if (from_end < overlap) {
            w = std::min(w, double(from_end + 1) / double(overlap + 1));
        }
    }
    return w;
}

}  // namespace

double segment_blend_weight(const std::vector<std::pair<int64_t, int64_t>>& plan, size_t window,
                            int64_t frame, int64_t overlap) {
    double total = 0.0;
    for (size_t i = 0; i < plan.size(); ++i) {
        total += raw_blend_weight(plan, i, frame, overlap);
    }
    if (total <= 0.0) {
        return 0.0;
    }
    return raw_blend_weight(plan, window, frame, overlap) / total;
}

LatentVolume run_segments(const SegmentInputs& inputs, DenoisingNetwork& net,
                          const std::vector<std::pair<int64_t, int64_t>>& plan,
                          const InferenceConfig& cfg, Rng& rng) {
    cfg.validate();
    require(!plan.empty(), ErrorCode::TooShort, "empty segment plan");
    require(inputs.masked_latents.dims() == 4 && inputs.audio_windows.dims() == 3,
            ErrorCode::ShapeMismatch, "bad segment inputs");
    int64_t frames = inputs.masked_latents.dim(0);
    require(inputs.audio_windows.dim(0) == frames, ErrorCode::ShapeMismatch,
            "audio rows must match frames");
    int64_t chw = inputs.masked_latents.numel() / frames;
    int64_t audio_row = inputs.audio_windows.numel() / frames;

    // one noise draw for the whole sequence, sliced per window
    Tensor eps(inputs.masked_latents.shape());
    for (int64_t i = 0; i < eps.numel(); ++i) {
        eps[i] = float(rng.normal());
    }

    NoiseSchedule schedule = cfg.schedule();
    Tensor acc(inputs.masked_latents.shape());
    std::vector<double> weight_sum(static_cast<size_t>(frames), 0.0);

    for (size_t wi = 0; wi < plan.size(); ++wi) {
        auto [start, end] = plan[wi];
        require(start >= 0 && end <= frames && start < end, ErrorCode::ShapeMismatch,
                "segment window out of range");
        int64_t len = end - start;
        Tensor noise_slice({len, inputs.masked_latents.dim(1), inputs.masked_latents.dim(2),
                            inputs.masked_latents.dim(3)});
        std::copy(eps.data() + start * chw, eps.data() + end * chw, noise_slice.data());
        Tensor masked_slice(noise_slice.shape());
        std::copy(inputs.masked_latents.data() + start * chw,
                  inputs.masked_latents.data() + end * chw, masked_slice.data());
        Tensor audio_slice({len, inputs.audio_windows.dim(1), inputs.audio_windows.dim(2)});
        std::copy(inputs.audio_windows.data() + start * audio_row,
                  inputs.audio_windows.data() + end * audio_row, audio_slice.data());

        ConditionVars cond;
        for (const Tensor& level : inputs.id_levels) {
            cond.id_levels.push_back(Var::constant(level));
        }
        cond.audio = Var::constant(std::move(audio_slice));
        cond.masked_latents = Var::constant(std::move(masked_slice));

        LatentVolume seg = sample(LatentVolume{std::move(noise_slice), inputs.latent_scale}, cond,
                                  net, schedule, cfg.guidance_scale, cfg.sigma_data);

        for (int64_t f = start; f < end; ++f) {
            double w = raw_blend_weight(plan, wi, f, cfg.overlap);
            weight_sum[size_t(f)] += w;
            const float* src = seg.data.data() + (f - start) * chw;
            float* dst = acc.data() + f * chw;
            for (int64_t i = 0; i < chw; ++i) {
                dst[i] += float(w) * src[i];
            }
        }
    }
    for (int64_t f = 0; f < frames; ++f) {
        require(weight_sum[size_t(f)] > 0.0, ErrorCode::TooShort,
                "frame " + std::to_string(f) + " not covered by any segment");
        float inv = float(1.0 / weight_sum[size_t(f)]);
        float* dst = acc.data() + f * chw;
        for (int64_t i = 0; i < chw; ++i) {
            dst[i] *= inv;
        }
    }
    return LatentVolume{std::move(acc), inputs.latent_scale};
}

VideoClip composite(const VideoClip& source, const VideoClip& generated_face,
                    const std::vector<BoundingBox>& src_boxes,
                    const std::vector<BoundingBox>& gen_boxes, double dilation_px) {
    int64_t frames = source.frame_count();
    require(generated_face.frame_count() == frames, ErrorCode::ShapeMismatch,
            "generated clip must match the source frame count");
    require(static_cast<int64_t>(src_boxes.size()) == frames &&
                static_cast<int64_t>(gen_boxes.size()) == frames,
            ErrorCode::ShapeMismatch, "need one box per frame");
    require(generated_face.channels() == source.channels(), ErrorCode::ShapeMismatch,
            "channel mismatch");

    Tensor out = source.frames;
    for (int64_t f = 0; f < frames; ++f) {
        BoundingBox src_d = src_boxes[size_t(f)].dilated(dilation_px);
        BoundingBox gen_d = gen_boxes[size_t(f)].dilated(dilation_px);
        BoundingBox region =
            union_rect(src_d, gen_d).clamped(source.width(), source.height());
        auto rx0 = static_cast<int64_t>(std::llround(region.x0));
        auto ry0 = static_cast<int64_t>(std::llround(region.y0));
        auto rx1 = static_cast<int64_t>(std::llround(region.x1));
        auto ry1 = static_cast<int64_t>(std::llround(region.y1));
        if (rx1 <= rx0 || ry1 <= ry0) {
            continue;
        }
        // resize the generated frame to the generated box geometry
        BoundingBox gb = gen_boxes[size_t(f)].clamped(source.width(), source.height());
        auto gx0 = static_cast<int64_t>(std::llround(gb.x0));
        auto gy0 = static_cast<int64_t>(std::llround(gb.y0));
        auto gx1 = static_cast<int64_t>(std::llround(gb.x1));
        auto gy1 = static_cast<int64_t>(std::llround(gb.y1));
        if (gx1 <= gx0 || gy1 <= gy0) {
            continue;
        }
        Tensor gen = generated_face.frame(f);
        Tensor resized = resize_bilinear(gen, gy1 - gy0, gx1 - gx0);
        for (int64_t y = std::max(ry0, gy0); y < std::min(ry1, gy1); ++y) {
            for (int64_t x = std::max(rx0, gx0); x < std::min(rx1, gx1); ++x) {
                for (int64_t c = 0; c < source.channels(); ++c) {
                    out.at4(f, c, y, x) = resized.at4(0, c, y - gy0, x - gx0);
                }
            }
        }
    }
    return VideoClip::create(std::move(out), source.fps, source.audio);
}

VideoClip infer(const VideoClip& source, const AudioTrack& audio,
                const LandmarkSequence& landmarks, const InferenceAssets& assets,
                const InferenceConfig& cfg) {
    cfg.validate();
    require(assets.net && assets.guider && assets.codec && assets.extractor,
            ErrorCode::ConfigMismatch, "incomplete inference assets");
    require(landmarks.size() == size_t(source.frame_count()), ErrorCode::ShapeMismatch,
            "need one landmark entry per source frame");
    Rng rng(cfg.seed);

    // 1. standardize to the audio duration
    AudioTrack audio_rs = resample_audio(audio, assets.extractor->expected_sample_rate());
    VideoClip matched = match_duration(source, audio_rs, cfg.junction_smooth_frames);
    int64_t frames = matched.frame_count();
    std::vector<int64_t> idx = palindrome_indices(source.frame_count(), frames);
    LandmarkSequence matched_landmarks;
    for (int64_t i = 0; i < frames; ++i) {
        matched_landmarks.points.push_back(landmarks.points[size_t(idx[size_t(i)])]);
    }

    // 2. track the face region: landmark bound, expansion, gap fill, smoothing
    auto raw_boxes = landmarks_to_box(matched_landmarks, cfg.bbox_expand_ratio, matched.width(),
                                      matched.height());
    auto crop_boxes = smooth_boxes(fill_missing(raw_boxes, cfg.max_landmark_gap),
                                   cfg.bbox_smooth_alpha);

    // 3. crop per frame and resize to the model resolution
    int64_t res = assets.resolution;
    Tensor face_frames({frames, matched.channels(), res, res});
    std::vector<std::array<double, 4>> crop_rects(static_cast<size_t>(frames));
    LandmarkSequence crop_landmarks;
    for (int64_t f = 0; f < frames; ++f) {
        BoundingBox b = crop_boxes[size_t(f)].clamped(matched.width(), matched.height());
        auto x0 = static_cast<int64_t>(std::floor(b.x0));
        auto y0 = static_cast<int64_t>(std::floor(b.y0));
        auto x1 = std::max<int64_t>(x0 + 1, static_cast<int64_t>(std::ceil(b.x1)));
        auto y1 = std::max<int64_t>(y0 + 1, static_cast<int64_t>(std::ceil(b.y1)));
        x1 = std::min<int64_t>(x1, matched.width());
        y1 = std::min<int64_t>(y1, matched.height());
        x0 = std::min(x0, x1 - 1);
        y0 = std::min(y0, y1 - 1);
        crop_rects[size_t(f)] = {double(x0), double(y0), double(x1), double(y1)};
        Tensor crop = crop_frames(matched.frame(f), x0, y0, x1, y1);
        Tensor resized = resize_bilinear(crop, res, res);
        std::copy(resized.data(), resized.data() + resized.numel(),
                  face_frames.data() + f * matched.channels() * res * res);
        // landmarks into crop coordinates
        if (matched_landmarks.points[size_t(f)]) {
            std::vector<Point2> pts;
            double sx = double(res) / double(x1 - x0);
            double sy = double(res) / double(y1 - y0);
            for (const Point2& p : *matched_landmarks.points[size_t(f)]) {
                pts.push_back(Point2{(p.x - double(x0)) * sx, (p.y - double(y0)) * sy});
            }
            crop_landmarks.points.emplace_back(std::move(pts));
        } else {
            crop_landmarks.points.emplace_back(std::nullopt);
        }
    }
    VideoClip face_clip = VideoClip::create(std::move(face_frames), matched.fps);

    // 4. adaptive lip masks in crop space
    MaskSequence masks = build_masks(crop_landmarks, cfg.pad_ratio, res, res,
                                     cfg.bbox_smooth_alpha, cfg.max_landmark_gap);

    // 5. reference frame (random by default, first frame behind the flag)
    auto ref_index = cfg.ref_first_frame ? 0 : static_cast<int64_t>(rng.below(uint64_t(frames)));
    Tensor ref_image = face_clip.frame(ref_index);
    Tensor ref_mask({1, 1, res, res});
    std::copy(masks.binary_masks.data() + ref_index * res * res,
              masks.binary_masks.data() + (ref_index + 1) * res * res, ref_mask.data());
    IdFeaturePyramid pyramid = encode_identity(ref_image, ref_mask, *assets.guider);

    // 6. per-frame conditions
    Tensor features = assets.extractor->extract(audio_rs, matched.fps);
    require(features.dim(0) >= frames, ErrorCode::ShapeMismatch,
            "audio features shorter than the matched video");
    AudioFeatureWindowed windows =
        window_audio(features, assets.net->config().audio_window);
    Tensor audio_rows({frames, windows.per_frame.dim(1), windows.per_frame.dim(2)});
    std::copy(windows.per_frame.data(),
              windows.per_frame.data() + audio_rows.numel(), audio_rows.data());
    LatentVolume masked_latents = encode_masked_video(face_clip, masks, *assets.codec);

    SegmentInputs inputs;
    inputs.audio_windows = std::move(audio_rows);
    inputs.masked_latents = masked_latents.data;
    inputs.id_levels = pyramid.levels;
    inputs.latent_scale = masked_latents.scale;

    // 7. segmented denoising (single window when the clip is shorter)
    std::vector<std::pair<int64_t, int64_t>> plan;
    if (frames < cfg.segment_len) {
        plan.emplace_back(0, frames);
    } else {
        plan = plan_segments(frames, cfg.segment_len, cfg.overlap);
    }
    LatentVolume latents = run_segments(inputs, *assets.net, plan, cfg, rng);
    VideoClip generated = latent_to_pixel(latents, *assets.codec, matched.fps);

    // 8. composite back into the source frames
    std::vector<BoundingBox> paste_boxes;
    for (int64_t f = 0; f < frames; ++f) {
        const auto& r = crop_rects[size_t(f)];
        paste_boxes.push_back(BoundingBox{r[0], r[1], r[2], r[3]});
    }
    VideoClip result = composite(matched, generated, paste_boxes, paste_boxes, cfg.dilation_px);
    return result;
}

}  // namespace lipsync
