#pragma once

#include <optional>
#include <vector>

#include "lipsync/media.hpp"

namespace lipsync {

// Per-frame rectangular lip-region masks. binary_masks is [F, 1, H, W] with
// 1 marking the editable region, and is exactly the rasterization of boxes.
struct MaskSequence {
    std::vector<BoundingBox> boxes;
    Tensor binary_masks;
    std::vector<bool> degenerate;  // rounded box had zero area

    int64_t frame_count() const { return binary_masks.dim(0); }
};

// Tight bound of the lip landmarks expanded by pad_ratio of width/height per
// side, clamped to the frame. MISSING frames propagate.
std::vector<std::optional<BoundingBox>> landmarks_to_box(const LandmarkSequence& landmarks,
                                                         double pad_ratio, int64_t frame_w,
                                                         int64_t frame_h);

// Fill MISSING runs by linear interpolation of corner coordinates between the
// nearest detected neighbours; leading/trailing runs copy the nearest box.
std::vector<BoundingBox> fill_missing(const std::vector<std::optional<BoundingBox>>& boxes,
                                      int max_gap = 8);

// Forward-looking temporal smoothing on raw corner coordinates:
// coord_t' = alpha*coord_t + (1-alpha)*coord_{t+1}; the final frame is kept.
std::vector<BoundingBox> smooth_boxes(const std::vector<BoundingBox>& boxes, double alpha = 0.75);

// Round boxes to the pixel grid and paint axis-aligned rectangles.
MaskSequence rasterize(const std::vector<BoundingBox>& boxes, int64_t height, int64_t width);

// Replace editable-region pixels with the fill value; the complement is
// untouched bit-exactly. Any audio travels along unchanged.
VideoClip apply_mask(const VideoClip& clip, const MaskSequence& masks, float fill = 0.0f);

// landmarks -> boxes -> gap fill -> smoothing -> rasterization in one step.
MaskSequence build_masks(const LandmarkSequence& landmarks, double pad_ratio, int64_t frame_w,
                         int64_t frame_h, double alpha = 0.75, int max_gap = 8);

}  // namespace lipsync
