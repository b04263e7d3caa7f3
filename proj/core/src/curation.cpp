#include "lipsync/curation.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>

#include "json.hpp"

#include "lipsync/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lipsync {

const std::vector<std::string> kCurationFilterOrder = {
    "detect", "gap", "resolution", "quality", "jitter", "length", "alignment"};

namespace {

float luminance(const Tensor& frame, int64_t y, int64_t x) {
    if (frame.dim(1) == 1) {
        return frame.at4(0, 0, y, x);
    }
    return 0.299f * frame.at4(0, 0, y, x) + 0.587f * frame.at4(0, 1, y, x) +
           0.114f * frame.at4(0, 2, y, x);
}

}  // namespace

std::vector<BoundingBox> LuminanceDetector::detect(const Tensor& frame) const {
    require(frame.dims() == 4 && frame.dim(0) == 1, ErrorCode::ShapeMismatch,
            "detector expects a single [1,C,H,W] frame");
    int64_t h = frame.dim(2), w = frame.dim(3);
    std::vector<uint8_t> bright(static_cast<size_t>(h * w), 0);
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            bright[static_cast<size_t>(y * w + x)] = luminance(frame, y, x) > threshold_ ? 1 : 0;
        }
    }
    std::vector<uint8_t> seen(static_cast<size_t>(h * w), 0);
    std::vector<BoundingBox> boxes;
    std::deque<int64_t> queue;
    for (int64_t start = 0; start < h * w; ++start) {
        if (!bright[static_cast<size_t>(start)] || seen[static_cast<size_t>(start)]) {
            continue;
        }
        int64_t min_x = w, max_x = -1, min_y = h, max_y = -1, area = 0;
        queue.clear();
        queue.push_back(start);
        seen[static_cast<size_t>(start)] = 1;
        while (!queue.empty()) {
            int64_t cur = queue.front();
            queue.pop_front();
            int64_t y = cur / w, x = cur % w;
            min_x = std::min(min_x, x);
            max_x = std::max(max_x, x);
            min_y = std::min(min_y, y);
            max_y = std::max(max_y, y);
            ++area;
            const int64_t dy[4] = {-1, 1, 0, 0};
            const int64_t dx[4] = {0, 0, -1, 1};
            for (int d = 0; d < 4; ++d) {
                int64_t ny = y + dy[d], nx = x + dx[d];
                if (ny < 0 || ny >= h || nx < 0 || nx >= w) {
                    continue;
                }
                int64_t ni = ny * w + nx;
                if (bright[static_cast<size_t>(ni)] && !seen[static_cast<size_t>(ni)]) {
                    seen[static_cast<size_t>(ni)] = 1;
                    queue.push_back(ni);
                }
            }
        }
        if (area >= min_area_) {
            boxes.push_back(BoundingBox{double(min_x), double(min_y), double(max_x + 1),
                                        double(max_y + 1)});
        }
    }
    return boxes;
}

double SharpnessQuality::score(const VideoClip& clip) const {
    double acc = 0.0;
    int64_t count = 0;
    for (int64_t f = 0; f < clip.frame_count(); ++f) {
        Tensor frame = clip.frame(f);
        for (int64_t y = 1; y + 1 < clip.height(); ++y) {
            for (int64_t x = 1; x + 1 < clip.width(); ++x) {
                double c = luminance(frame, y, x);
                double lap = 4.0 * c - luminance(frame, y - 1, x) - luminance(frame, y + 1, x) -
                             luminance(frame, y, x - 1) - luminance(frame, y, x + 1);
                acc += std::abs(lap);
                ++count;
            }
        }
    }
    return count > 0 ? std::min(1.0, acc / double(count)) : 0.0;
}

bool EnergyAlignment::aligned(const VideoClip& clip) const {
    if (!clip.audio || clip.audio->samples.empty()) {
        return false;
    }
    double acc = 0.0;
    for (float s : clip.audio->samples) {
        acc += double(s) * double(s);
    }
    return std::sqrt(acc / double(clip.audio->samples.size())) >= min_rms_;
}

bool resolution_gate(const std::vector<std::optional<std::pair<double, double>>>& face_sizes,
                     double face_side) {
    bool any = false;
    for (const auto& size : face_sizes) {
        if (!size) {
            continue;
        }
        any = true;
        if (size->first > face_side && size->second > face_side) {
            return true;
        }
    }
    require(any, ErrorCode::NoFace, "no detection in any frame");
    return false;
}

std::vector<std::pair<int64_t, int64_t>> jitter_segment(const std::vector<BoundingBox>& boxes,
                                                        double displacement_threshold) {
    int64_t n = static_cast<int64_t>(boxes.size());
    std::vector<std::pair<int64_t, int64_t>> ranges;
    if (n == 0) {
        return ranges;
    }
    int64_t start = 0;
    for (int64_t f = 1; f < n; ++f) {
        double dx = boxes[size_t(f)].center_x() - boxes[size_t(f - 1)].center_x();
        double dy = boxes[size_t(f)].center_y() - boxes[size_t(f - 1)].center_y();
        if (std::sqrt(dx * dx + dy * dy) > displacement_threshold) {
            ranges.emplace_back(start, f);
            start = f;
        }
    }
    ranges.emplace_back(start, n);
    return ranges;
}

bool length_gate(int64_t frames, double fps, double min_seconds) {
    require(fps > 0, ErrorCode::InvalidRate, "fps must be positive");
    return double(frames) / fps >= min_seconds;
}

std::vector<const CurationRecord*> CurationManifest::survivors() const {
    std::vector<const CurationRecord*> out;
    for (const auto& r : records) {
        if (!r.output_path.empty()) {
            out.push_back(&r);
        }
    }
    return out;
}

namespace {

CurationRecord base_record(const std::string& source) {
    CurationRecord record;
    record.source = source;
    for (const auto& name : kCurationFilterOrder) {
        record.verdicts[name] = "skip";
    }
    return record;
}

VideoClip slice_with_audio(const VideoClip& clip, int64_t start, int64_t end) {
    int64_t chw = clip.channels() * clip.height() * clip.width();
    Tensor frames({end - start, clip.channels(), clip.height(), clip.width()});
    std::copy(clip.frames.data() + start * chw, clip.frames.data() + end * chw, frames.data());
    std::optional<AudioTrack> audio;
    if (clip.audio) {
        double rate = clip.audio->sample_rate;
        auto s0 = static_cast<int64_t>(std::llround(double(start) / clip.fps * rate));
        auto s1 = static_cast<int64_t>(std::llround(double(end) / clip.fps * rate));
        s0 = std::clamp<int64_t>(s0, 0, int64_t(clip.audio->samples.size()));
        s1 = std::clamp<int64_t>(s1, s0, int64_t(clip.audio->samples.size()));
        audio = AudioTrack::create(std::vector<float>(clip.audio->samples.begin() + s0,
                                                      clip.audio->samples.begin() + s1),
                                   rate);
    }
    return VideoClip::create(std::move(frames), clip.fps, std::move(audio));
}

}  // namespace

CurationManifest run_pipeline(const std::vector<fs::path>& sources,
                              const CurationAdapters& adapters,
                              const CurationThresholds& thresholds, const fs::path& out_dir,
                              const CurationManifest* resume_from) {
    require(adapters.detector && adapters.quality && adapters.alignment,
            ErrorCode::ConfigMismatch, "curation needs detector, quality, alignment adapters");
    CurationManifest manifest;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
    }
    for (const fs::path& source : sources) {
        if (resume_from) {
            bool done = false;
            for (const auto& r : resume_from->records) {
                if (r.source == source.string()) {
                    manifest.records.push_back(r);
                    done = true;
                }
            }
            if (done) {
                continue;
            }
        }
        CurationRecord record = base_record(source.string());
        VideoClip clip;
        try {
            clip = load_video(source);
        } catch (const Error& e) {
            record.error = e.what();
            manifest.records.push_back(std::move(record));
            continue;
        }

        // detect: largest box per frame, max-area with top-left tie-break
        std::vector<std::optional<BoundingBox>> faces;
        std::vector<std::optional<std::pair<double, double>>> sizes;
        bool any_face = false;
        for (int64_t f = 0; f < clip.frame_count(); ++f) {
            std::vector<BoundingBox> boxes = adapters.detector->detect(clip.frame(f));
            if (boxes.empty()) {
                faces.emplace_back(std::nullopt);
                sizes.emplace_back(std::nullopt);
                continue;
            }
            const BoundingBox* best = &boxes[0];
            for (const BoundingBox& b : boxes) {
                if (b.area() > best->area() ||
                    (b.area() == best->area() &&
                     std::make_pair(b.y0, b.x0) < std::make_pair(best->y0, best->x0))) {
                    best = &b;
                }
            }
            faces.emplace_back(*best);
            sizes.emplace_back(std::make_pair(best->width(), best->height()));
            record.max_face_w = std::max(record.max_face_w, best->width());
            record.max_face_h = std::max(record.max_face_h, best->height());
            any_face = true;
        }
        record.verdicts["detect"] = any_face ? "pass" : "fail";
        if (!any_face) {
            manifest.records.push_back(std::move(record));
            continue;
        }

        // gap: the adaptive-mask allowance tolerates short missing runs
        int64_t longest_gap = 0, run = 0;
        for (const auto& f : faces) {
            run = f ? 0 : run + 1;
            longest_gap = std::max(longest_gap, run);
        }
        record.verdicts["gap"] = longest_gap <= thresholds.max_face_gap ? "pass" : "fail";
        if (record.verdicts["gap"] == "fail") {
            manifest.records.push_back(std::move(record));
            continue;
        }

        record.verdicts["resolution"] =
            resolution_gate(sizes, thresholds.face_side) ? "pass" : "fail";
        if (record.verdicts["resolution"] == "fail") {
            manifest.records.push_back(std::move(record));
            continue;
        }

        record.quality_score = adapters.quality->score(clip);
        record.verdicts["quality"] = record.quality_score >= thresholds.quality_min ? "pass"
                                                                                     : "fail";
        if (record.verdicts["quality"] == "fail") {
            manifest.records.push_back(std::move(record));
            continue;
        }

        std::vector<BoundingBox> filled = fill_missing(faces, thresholds.max_face_gap);
        double displacement = thresholds.jitter_displacement;
        if (displacement <= 0.0) {
            displacement = 0.1 * std::sqrt(double(clip.width() * clip.width() +
                                                  clip.height() * clip.height()));
        }
        auto ranges = jitter_segment(filled, displacement);
        record.jitter_cuts = int(ranges.size()) - 1;
        record.verdicts["jitter"] = "pass";

        std::vector<std::pair<int64_t, int64_t>> long_enough;
        for (auto [s, e] : ranges) {
            if (length_gate(e - s, clip.fps, thresholds.min_seconds)) {
                long_enough.emplace_back(s, e);
            }
        }
        record.verdicts["length"] = long_enough.empty() ? "fail" : "pass";
        if (long_enough.empty()) {
            manifest.records.push_back(std::move(record));
            continue;
        }

        bool aligned = adapters.alignment->aligned(clip);
        record.verdicts["alignment"] = aligned ? "pass" : "fail";
        if (!aligned) {
            manifest.records.push_back(std::move(record));
            continue;
        }

        int seg_index = 0;
        for (auto [s, e] : long_enough) {
            CurationRecord emitted = record;
            emitted.time_range = {s, e};
            if (!out_dir.empty()) {
                fs::path seg_dir =
                    out_dir / (source.stem().string() + "_seg" + std::to_string(seg_index));
                save_video(slice_with_audio(clip, s, e), seg_dir);
                emitted.output_path = seg_dir.string();
            } else {
                emitted.output_path = source.string() + "#" + std::to_string(s) + "-" +
                                      std::to_string(e);
            }
            manifest.records.push_back(std::move(emitted));
            ++seg_index;
        }
    }
    return manifest;
}

namespace {

json record_to_json(const CurationRecord& r) {
    return json{{"source", r.source},
                {"time_range", {r.time_range.first, r.time_range.second}},
                {"max_face_size", {r.max_face_w, r.max_face_h}},
                {"quality_score", r.quality_score},
                {"jitter_cuts", r.jitter_cuts},
                {"verdicts", r.verdicts},
                {"output_path", r.output_path},
                {"error", r.error}};
}

CurationRecord record_from_json(const json& j) {
    CurationRecord r;
    r.source = j.at("source").get<std::string>();
    r.time_range = {j.at("time_range")[0].get<int64_t>(), j.at("time_range")[1].get<int64_t>()};
    r.max_face_w = j.at("max_face_size")[0].get<double>();
    r.max_face_h = j.at("max_face_size")[1].get<double>();
    r.quality_score = j.at("quality_score").get<double>();
    r.jitter_cuts = j.at("jitter_cuts").get<int>();
    r.verdicts = j.at("verdicts").get<std::map<std::string, std::string>>();
    r.output_path = j.at("output_path").get<std::string>();
    r.error = j.at("error").get<std::string>();
    return r;
}

}  // namespace

void save_manifest(const CurationManifest& manifest, const fs::path& path) {
    std::ofstream out(path);
    require(out.good(), ErrorCode::IoFailure, "cannot write manifest " + path.string());
    for (const auto& r : manifest.records) {
        out << record_to_json(r).dump() << "\n";
    }
}

CurationManifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::IoFailure, "cannot open manifest " + path.string());
    CurationManifest manifest;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        try {
            manifest.records.push_back(record_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            raise(ErrorCode::SchemaError, "bad manifest line: " + std::string(e.what()));
        }
    }
    return manifest;
}

}  // namespace lipsync
