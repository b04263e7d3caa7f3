#include "lipsync/masking.hpp"

#include <algorithm>
#include <cmath>

#include "lipsync/errors.hpp"

namespace lipsync {

std::vector<std::optional<BoundingBox>> landmarks_to_box(const LandmarkSequence& landmarks,
                                                         double pad_ratio, int64_t frame_w,
                                                         int64_t frame_h) {
    require(pad_ratio >= 0, ErrorCode::ConfigMismatch, "pad_ratio must be >= 0");
    std::vector<std::optional<BoundingBox>> out;
    out.reserve(landmarks.points.size());
    for (const auto& frame : landmarks.points) {
        if (!frame || frame->empty()) {
            out.emplace_back(std::nullopt);
            continue;
        }
        BoundingBox b{frame->front().x, frame->front().y, frame->front().x, frame->front().y};
        for (const Point2& p : *frame) {
            b.x0 = std::min(b.x0, p.x);
            b.y0 = std::min(b.y0, p.y);
            b.x1 = std::max(b.x1, p.x);
            b.y1 = std::max(b.y1, p.y);
        }
        out.emplace_back(b.expanded(pad_ratio).clamped(frame_w, frame_h));
    }
    return out;
}

std::vector<BoundingBox> fill_missing(const std::vector<std::optional<BoundingBox>>& boxes,
                                      int max_gap) {
    int64_t n = static_cast<int64_t>(boxes.size());
    std::vector<int64_t> present;
    for (int64_t i = 0; i < n; ++i) {
        if (boxes[static_cast<size_t>(i)]) {
            present.push_back(i);
        }
    }
    require(!present.empty(), ErrorCode::NoFace, "no detected box in any frame");

    // longest MISSING run, including leading/trailing runs
    int64_t run = 0;
    for (int64_t i = 0; i < n; ++i) {
        if (!boxes[static_cast<size_t>(i)]) {
            ++run;
            require(run <= max_gap, ErrorCode::GapTooLong,
                    "missing-box run exceeds " + std::to_string(max_gap) + " frames");
        } else {
            run = 0;
        }
    }

    std::vector<BoundingBox> out(static_cast<size_t>(n));
    size_t next_present = 0;
    for (int64_t i = 0; i < n; ++i) {
        if (boxes[static_cast<size_t>(i)]) {
            out[static_cast<size_t>(i)] = *boxes[static_cast<size_t>(i)];
            continue;
        }
        while (next_present < present.size() && present[next_present] < i) {
            ++next_present;
        }
        bool has_next = next_present < present.size();
        bool has_prev = next_present > 0;
        if (has_prev && has_next) {
            int64_t lo = present[next_present - 1], hi = present[next_present];
            double t = double(i - lo) / double(hi - lo);
            const BoundingBox& a = *boxes[static_cast<size_t>(lo)];
            const BoundingBox& b = *boxes[static_cast<size_t>(hi)];
            out[static_cast<size_t>(i)] =
                BoundingBox{a.x0 + t * (b.x0 - a.x0), a.y0 + t * (b.y0 - a.y0),
                            a.x1 + t * (b.x1 - a.x1), a.y1 + t * (b.y1 - a.y1)};
        } else if (has_next) {
            out[static_cast<size_t>(i)] = *boxes[static_cast<size_t>(present[next_present])];
        } else {
            out[static_cast<size_t>(i)] = *boxes[static_cast<size_t>(present.back())];
        }
    }
    return out;
}

std::vector<BoundingBox> smooth_boxes(const std::vector<BoundingBox>& boxes, double alpha) {
    require(!boxes.empty(), ErrorCode::ShapeMismatch, "smooth_boxes on empty sequence");
    require(alpha >= 0.0 && alpha <= 1.0, ErrorCode::ConfigMismatch, "alpha must be in [0,1]");
    std::vector<BoundingBox> out = boxes;
    for (size_t t = 0; t + 1 < boxes.size(); ++t) {
        const BoundingBox& a = boxes[t];
        const BoundingBox& b = boxes[t + 1];
        out[t] = BoundingBox{alpha * a.x0 + (1.0 - alpha) * b.x0,
                             alpha * a.y0 + (1.0 - alpha) * b.y0,
                             alpha * a.x1 + (1.0 - alpha) * b.x1,
                             alpha * a.y1 + (1.0 - alpha) * b.y1};
    }
    return out;
}

MaskSequence rasterize(const std::vector<BoundingBox>& boxes, int64_t height, int64_t width) {
    int64_t f_count = static_cast<int64_t>(boxes.size());
    MaskSequence seq;
    seq.boxes = boxes;
    seq.binary_masks = Tensor({f_count, 1, height, width});
    seq.degenerate.assign(boxes.size(), false);
    for (int64_t f = 0; f < f_count; ++f) {
        const BoundingBox& b = boxes[static_cast<size_t>(f)];
        int64_t x0 = std::clamp<int64_t>(std::llround(b.x0), 0, width);
        int64_t x1 = std::clamp<int64_t>(std::llround(b.x1), 0, width);
        int64_t y0 = std::clamp<int64_t>(std::llround(b.y0), 0, height);
        int64_t y1 = std::clamp<int64_t>(std::llround(b.y1), 0, height);
        if (x1 <= x0 || y1 <= y0) {
            seq.degenerate[static_cast<size_t>(f)] = true;
            continue;
        }
        for (int64_t y = y0; y < y1; ++y) {
            for (int64_t x = x0; x < x1; ++x) {
                seq.binary_masks.at4(f, 0, y, x) = 1.0f;
            }
        }
    }
    return seq;
}

VideoClip apply_mask(const VideoClip& clip, const MaskSequence& masks, float fill) {
    require(masks.binary_masks.dim(0) == clip.frame_count() &&
                masks.binary_masks.dim(2) == clip.height() &&
                masks.binary_masks.dim(3) == clip.width(),
            ErrorCode::ShapeMismatch,
            "mask shape " + shape_str(masks.binary_masks.shape()) + " does not match clip " +
                shape_str(clip.frames.shape()));
    Tensor out = clip.frames;
    for (int64_t f = 0; f < clip.frame_count(); ++f) {
        for (int64_t y = 0; y < clip.height(); ++y) {
            for (int64_t x = 0; x < clip.width(); ++x) {
                if (masks.binary_masks.at4(f, 0, y, x) != 0.0f) {
                    for (int64_t c = 0; c < clip.channels(); ++c) {
                        out.at4(f, c, y, x) = fill;
                    }
                }
            }
        }
    }
    return VideoClip::create(std::move(out), clip.fps, clip.audio);
}

MaskSequence build_masks(const LandmarkSequence& landmarks, double pad_ratio, int64_t frame_w,
                         int64_t frame_h, double alpha, int max_gap) {
    auto raw = landmarks_to_box(landmarks, pad_ratio, frame_w, frame_h);
    auto filled = fill_missing(raw, max_gap);
    auto smoothed = smooth_boxes(filled, alpha);
    return rasterize(smoothed, frame_h, frame_w);
}

}  // namespace lipsync
