#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lipsync/masking.hpp"
#include "lipsync/media.hpp"

namespace lipsync {

// Adapter contracts. All bundled backends are deterministic; heavyweight
// pretrained detectors/IQA models plug in behind the same interfaces.
class DetectorAdapter {
public:
    virtual ~DetectorAdapter() = default;
    virtual std::vector<BoundingBox> detect(const Tensor& frame) const = 0;  // [1,C,H,W]
};

class QualityAdapter {
public:
    virtual ~QualityAdapter() = default;
    virtual double score(const VideoClip& clip) const = 0;
    virtual std::pair<double, double> score_range() const = 0;
};

class AlignmentAdapter {
public:
    virtual ~AlignmentAdapter() = default;
    virtual bool aligned(const VideoClip& clip) const = 0;
};

// Bright-region detector: luminance threshold plus 4-connected components.
class LuminanceDetector : public DetectorAdapter {
public:
    explicit LuminanceDetector(float threshold = 0.7f, int64_t min_area = 16)
        : threshold_(threshold), min_area_(min_area) {}
    std::vector<BoundingBox> detect(const Tensor& frame) const override;

private:
    float threshold_;
    int64_t min_area_;
};

// Sharpness proxy: mean absolute 4-neighbour Laplacian of the luminance.
class SharpnessQuality : public QualityAdapter {
public:
    double score(const VideoClip& clip) const override;
    std::pair<double, double> score_range() const override { return {0.0, 1.0}; }
};

// Flags clips whose audio is missing or has negligible energy as misaligned.
class EnergyAlignment : public AlignmentAdapter {
public:
    explicit EnergyAlignment(double min_rms = 0.01) : min_rms_(min_rms) {}
    bool aligned(const VideoClip& clip) const override;

private:
    double min_rms_;
};

struct CurationThresholds {
    double face_side = 228.0;          // a face must exceed this in both dimensions
    double min_seconds = 2.0;
    int max_face_gap = 8;
    double quality_min = 0.01;
    double jitter_displacement = 0.0;  // <= 0 derives 10% of the frame diagonal
};

struct CurationRecord {
    std::string source;
    std::pair<int64_t, int64_t> time_range{0, 0};  // [start, end) frames
    double max_face_w = 0.0;
    double max_face_h = 0.0;
    double quality_score = 0.0;
    int jitter_cuts = 0;
    std::map<std::string, std::string> verdicts;  // filter -> pass/fail/skip
    std::string output_path;  // empty unless the range was emitted
    std::string error;        // per-source load failures, recorded not thrown
};

struct CurationManifest {
    std::vector<CurationRecord> records;

    std::vector<const CurationRecord*> survivors() const;
};

// The filters are evaluated in this order; after the first fail the rest are
// recorded as "skip".
extern const std::vector<std::string> kCurationFilterOrder;

// pass iff some frame's face exceeds face_side in both width and height;
// NO_FACE when every frame is MISSING.
bool resolution_gate(const std::vector<std::optional<std::pair<double, double>>>& face_sizes,
                     double face_side = 228.0);

// Cut wherever the box-center displacement between consecutive frames is
// strictly greater than the threshold; returns maximal uncut [start, end).
std::vector<std::pair<int64_t, int64_t>> jitter_segment(const std::vector<BoundingBox>& boxes,
                                                        double displacement_threshold);

bool length_gate(int64_t frames, double fps, double min_seconds = 2.0);

struct CurationAdapters {
    const DetectorAdapter* detector = nullptr;
    const QualityAdapter* quality = nullptr;
    const AlignmentAdapter* alignment = nullptr;
};

// detect -> gap -> resolution -> quality -> jitter -> length -> alignment,
// every decision logged. Surviving ranges are written under out_dir when
// given. Sources already present in `resume_from` are carried over untouched.
CurationManifest run_pipeline(const std::vector<std::filesystem::path>& sources,
                              const CurationAdapters& adapters,
                              const CurationThresholds& thresholds,
                              const std::filesystem::path& out_dir = {},
                              const CurationManifest* resume_from = nullptr);

void save_manifest(const CurationManifest& manifest, const std::filesystem::path& path);
CurationManifest load_manifest(const std::filesystem::path& path);

}  // namespace lipsync
