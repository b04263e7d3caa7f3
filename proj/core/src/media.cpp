#include "lipsync/media.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "lipsync/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lipsync {

AudioTrack AudioTrack::create(std::vector<float> samples, double sample_rate) {
    require(sample_rate > 0, ErrorCode::InvalidRate, "sample_rate must be positive");
    for (float v : samples) {
        require(std::isfinite(v), ErrorCode::NonFiniteInput, "audio sample is not finite");
    }
    return AudioTrack{std::move(samples), sample_rate};
}

VideoClip VideoClip::create(Tensor frames, double fps, std::optional<AudioTrack> audio) {
    require(frames.dims() == 4, ErrorCode::ShapeMismatch,
            "frames must be [F,C,H,W], got " + shape_str(frames.shape()));
    require(frames.dim(0) >= 1, ErrorCode::EmptyVideo, "clip has zero frames");
    require(frames.dim(1) == 1 || frames.dim(1) == 3, ErrorCode::ShapeMismatch,
            "channel count must be 1 or 3");
    require(fps > 0, ErrorCode::InvalidRate, "fps must be positive");
    check_finite(frames, "VideoClip frames");
    VideoClip clip{std::move(frames), fps, std::move(audio)};
    if (clip.audio) {
        double mismatch = std::abs(clip.audio->duration() - clip.duration());
        require(mismatch <= 1.0 / fps + 1e-9, ErrorCode::ShapeMismatch,
                "audio is not time-aligned to frames (off by " + std::to_string(mismatch) + " s)");
    }
    return clip;
}

Tensor VideoClip::frame(int64_t f) const {
    int64_t chw = channels() * height() * width();
    Tensor out({1, channels(), height(), width()});
    std::copy(frames.data() + f * chw, frames.data() + (f + 1) * chw, out.data());
    return out;
}

BoundingBox BoundingBox::clamped(int64_t frame_w, int64_t frame_h) const {
    BoundingBox b;
    b.x0 = std::clamp(x0, 0.0, double(frame_w));
    b.x1 = std::clamp(x1, 0.0, double(frame_w));
    b.y0 = std::clamp(y0, 0.0, double(frame_h));
    b.y1 = std::clamp(y1, 0.0, double(frame_h));
    return b;
}

BoundingBox BoundingBox::expanded(double ratio) const {
    double dx = ratio * width();
    double dy = ratio * height();
    return BoundingBox{x0 - dx, y0 - dy, x1 + dx, y1 + dy};
}

BoundingBox BoundingBox::dilated(double px) const {
    return BoundingBox{x0 - px, y0 - px, x1 + px, y1 + px};
}

BoundingBox union_rect(const BoundingBox& a, const BoundingBox& b) {
    return BoundingBox{std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1),
                       std::max(a.y1, b.y1)};
}

LandmarkSequence load_landmarks(const fs::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::IoFailure, "cannot open landmarks file " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        raise(ErrorCode::UnreadableMedia, "bad landmarks JSON: " + std::string(e.what()));
    }
    require(doc.is_array(), ErrorCode::SchemaError, "landmarks root must be an array");
    LandmarkSequence seq;
    for (const auto& fr : doc) {
        if (fr.is_null()) {
            seq.points.emplace_back(std::nullopt);
            continue;
        }
        require(fr.is_array(), ErrorCode::SchemaError, "landmark frame must be array or null");
        std::vector<Point2> pts;
        for (const auto& p : fr) {
            require(p.is_array() && p.size() == 2, ErrorCode::SchemaError,
                    "landmark point must be [x, y]");
            pts.push_back(Point2{p[0].get<double>(), p[1].get<double>()});
        }
        seq.points.emplace_back(std::move(pts));
    }
    return seq;
}

void save_landmarks(const LandmarkSequence& seq, const fs::path& path) {
    json doc = json::array();
    for (const auto& fr : seq.points) {
        if (!fr) {
            doc.push_back(nullptr);
            continue;
        }
        json arr = json::array();
        for (const auto& p : *fr) {
            arr.push_back({p.x, p.y});
        }
        doc.push_back(std::move(arr));
    }
    std::ofstream out(path);
    require(out.good(), ErrorCode::IoFailure, "cannot write " + path.string());
    out << doc.dump(2) << "\n";
}

namespace {

Tensor mat_to_frame(const cv::Mat& img) {
    require(!img.empty(), ErrorCode::UnreadableMedia, "decoded empty image");
    int64_t c = img.channels() >= 3 ? 3 : 1;
    cv::Mat use;
    if (img.channels() == 4) {
        cv::cvtColor(img, use, cv::COLOR_BGRA2BGR);
    } else {
        use = img;
    }
    int64_t h = use.rows, w = use.cols;
    Tensor out({1, c, h, w});
    for (int64_t y = 0; y < h; ++y) {
        const uint8_t* row = use.ptr<uint8_t>(static_cast<int>(y));
        for (int64_t x = 0; x < w; ++x) {
            if (c == 1) {
                out.at4(0, 0, y, x) = float(row[x]) / 255.0f;
            } else {
                // OpenCV is BGR; internal layout is RGB
                out.at4(0, 0, y, x) = float(row[x * 3 + 2]) / 255.0f;
                out.at4(0, 1, y, x) = float(row[x * 3 + 1]) / 255.0f;
                out.at4(0, 2, y, x) = float(row[x * 3 + 0]) / 255.0f;
            }
        }
    }
    return out;
}

cv::Mat frame_to_mat(const Tensor& frames, int64_t f) {
    int64_t c = frames.dim(1), h = frames.dim(2), w = frames.dim(3);
    cv::Mat img(static_cast<int>(h), static_cast<int>(w), c == 1 ? CV_8UC1 : CV_8UC3);
    auto to8 = [](float v) {
        return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    };
    for (int64_t y = 0; y < h; ++y) {
        uint8_t* row = img.ptr<uint8_t>(static_cast<int>(y));
        for (int64_t x = 0; x < w; ++x) {
            if (c == 1) {
                row[x] = to8(frames.at4(f, 0, y, x));
            } else {
                row[x * 3 + 0] = to8(frames.at4(f, 2, y, x));
                row[x * 3 + 1] = to8(frames.at4(f, 1, y, x));
                row[x * 3 + 2] = to8(frames.at4(f, 0, y, x));
            }
        }
    }
    return img;
}

Tensor stack_frames(const std::vector<Tensor>& frames) {
    int64_t f_count = static_cast<int64_t>(frames.size());
    const Shape& s0 = frames[0].shape();
    Tensor out({f_count, s0[1], s0[2], s0[3]});
    int64_t chw = s0[1] * s0[2] * s0[3];
    for (int64_t f = 0; f < f_count; ++f) {
        require(frames[static_cast<size_t>(f)].shape() == s0, ErrorCode::ShapeMismatch,
                "frame size changed mid-stream");
        std::copy(frames[static_cast<size_t>(f)].data(),
                  frames[static_cast<size_t>(f)].data() + chw, out.data() + f * chw);
    }
    return out;
}

VideoClip load_frame_dir(const fs::path& dir) {
    fs::path sidecar = dir / "clip.json";
    require(fs::exists(sidecar), ErrorCode::UnreadableMedia,
            "missing clip.json sidecar in " + dir.string());
    std::ifstream in(sidecar);
    json meta;
    try {
        in >> meta;
    } catch (const json::exception& e) {
        raise(ErrorCode::UnreadableMedia, "bad clip.json: " + std::string(e.what()));
    }
    require(meta.contains("fps"), ErrorCode::UnreadableMedia, "clip.json missing fps");
    double fps = meta["fps"].get<double>();

    std::vector<fs::path> pngs;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".png") {
            pngs.push_back(entry.path());
        }
    }
    std::sort(pngs.begin(), pngs.end());
    if (pngs.empty()) {
        raise(ErrorCode::EmptyVideo, "no frames in " + dir.string());
    }
    std::vector<Tensor> frames;
    for (const auto& p : pngs) {
        cv::Mat img = cv::imread(p.string(), cv::IMREAD_UNCHANGED);
        require(!img.empty(), ErrorCode::UnreadableMedia, "cannot decode " + p.string());
        frames.push_back(mat_to_frame(img));
    }

    std::optional<AudioTrack> audio;
    if (meta.contains("audio_path") && !meta["audio_path"].is_null()) {
        fs::path ap = meta["audio_path"].get<std::string>();
        if (ap.is_relative()) {
            ap = dir / ap;
        }
        audio = load_wav(ap);
    }
    return VideoClip::create(stack_frames(frames), fps, std::move(audio));
}

VideoClip load_container(const fs::path& path) {
    cv::VideoCapture cap(path.string());
    require(cap.isOpened(), ErrorCode::UnreadableMedia, "cannot open " + path.string());
    double fps = cap.get(cv::CAP_PROP_FPS);
    if (!(fps > 0)) {
        fps = 25.0;  // containers without timing metadata
    }
    std::vector<Tensor> frames;
    cv::Mat img;
    while (cap.read(img)) {
        frames.push_back(mat_to_frame(img));
    }
    if (frames.empty()) {
        raise(ErrorCode::EmptyVideo, "no decodable frames in " + path.string());
    }
    return VideoClip::create(stack_frames(frames), fps);
}

}  // namespace

VideoClip load_video(const fs::path& path) {
    require(fs::exists(path), ErrorCode::UnreadableMedia, "no such path: " + path.string());
    if (fs::is_directory(path)) {
        return load_frame_dir(path);
    }
    return load_container(path);
}

Tensor load_image(const fs::path& path) {
    cv::Mat img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    require(!img.empty(), ErrorCode::UnreadableMedia, "cannot decode image " + path.string());
    return mat_to_frame(img);
}

void save_image(const Tensor& frame, const fs::path& path) {
    require(frame.dims() == 4 && frame.dim(0) == 1, ErrorCode::ShapeMismatch,
            "save_image expects [1,C,H,W]");
    require(cv::imwrite(path.string(), frame_to_mat(frame, 0)), ErrorCode::IoFailure,
            "cannot write image " + path.string());
}

void save_video(const VideoClip& clip, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    require(fs::is_directory(dir), ErrorCode::IoFailure, "cannot create " + dir.string());
    char name[32];
    for (int64_t f = 0; f < clip.frame_count(); ++f) {
        std::snprintf(name, sizeof(name), "frame_%06lld.png", static_cast<long long>(f));
        cv::Mat img = frame_to_mat(clip.frames, f);
        require(cv::imwrite((dir / name).string(), img), ErrorCode::IoFailure,
                "cannot write frame " + std::string(name));
    }
    json meta;
    meta["fps"] = clip.fps;
    if (clip.audio) {
        save_wav(*clip.audio, dir / "audio.wav");
        meta["audio_path"] = "audio.wav";
    } else {
        meta["audio_path"] = nullptr;
    }
    std::ofstream out(dir / "clip.json");
    require(out.good(), ErrorCode::IoFailure, "cannot write clip.json");
    out << meta.dump(2) << "\n";
}

namespace {

uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

uint16_t read_u16(std::istream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    return uint16_t(b[0]) | uint16_t(b[1]) << 8;
}

void write_u32(std::ostream& out, uint32_t v) {
    char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
                 char((v >> 24) & 0xff)};
    out.write(b, 4);
}

void write_u16(std::ostream& out, uint16_t v) {
    char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
    out.write(b, 2);
}

}  // namespace

AudioTrack load_wav(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::UnreadableMedia, "cannot open " + path.string());
    char tag[4];
    in.read(tag, 4);
    require(in.good() && std::memcmp(tag, "RIFF", 4) == 0, ErrorCode::UnreadableMedia,
            "not a RIFF file: " + path.string());
    read_u32(in);  // riff size
    in.read(tag, 4);
    require(std::memcmp(tag, "WAVE", 4) == 0, ErrorCode::UnreadableMedia, "not a WAVE file");

    uint16_t channels = 0, bits = 0;
    uint32_t rate = 0;
    std::vector<float> samples;
    bool got_fmt = false, got_data = false;
    while (in.read(tag, 4)) {
        uint32_t size = read_u32(in);
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            uint16_t format = read_u16(in);
            channels = read_u16(in);
            rate = read_u32(in);
            read_u32(in);  // byte rate
            read_u16(in);  // block align
            bits = read_u16(in);
            require(format == 1 && bits == 16, ErrorCode::UnreadableMedia,
                    "only PCM-16 WAV is supported");
            if (size > 16) {
                in.seekg(size - 16, std::ios::cur);
            }
            got_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            require(got_fmt, ErrorCode::UnreadableMedia, "data chunk before fmt");
            uint32_t count = size / 2;
            std::vector<int16_t> raw(count);
            in.read(reinterpret_cast<char*>(raw.data()), count * 2);
            require(in.gcount() == std::streamsize(count * 2), ErrorCode::UnreadableMedia,
                    "truncated WAV data");
            uint32_t frames_n = channels > 0 ? count / channels : 0;
            samples.resize(frames_n);
            for (uint32_t i = 0; i < frames_n; ++i) {
                // downmix to mono
                double acc = 0.0;
                for (uint16_t c = 0; c < channels; ++c) {
                    acc += double(raw[i * channels + c]) / 32768.0;
                }
                samples[i] = float(acc / double(channels));
            }
            got_data = true;
        } else {
            in.seekg(size + (size & 1), std::ios::cur);
        }
    }
    require(got_data, ErrorCode::UnreadableMedia, "no data chunk in " + path.string());
    return AudioTrack::create(std::move(samples), double(rate));
}

void save_wav(const AudioTrack& track, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorCode::IoFailure, "cannot write " + path.string());
    uint32_t n = static_cast<uint32_t>(track.samples.size());
    uint32_t rate = static_cast<uint32_t>(std::llround(track.sample_rate));
    out.write("RIFF", 4);
    write_u32(out, 36 + n * 2);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    write_u32(out, 16);
    write_u16(out, 1);  // PCM
    write_u16(out, 1);  // mono
    write_u32(out, rate);
    write_u32(out, rate * 2);
    write_u16(out, 2);
    write_u16(out, 16);
    out.write("data", 4);
    write_u32(out, n * 2);
    for (float v : track.samples) {
        auto s = static_cast<int16_t>(std::lround(std::clamp(v, -1.0f, 1.0f) * 32767.0f));
        write_u16(out, static_cast<uint16_t>(s));
    }
}

Tensor resize_bilinear(const Tensor& frames, int64_t out_h, int64_t out_w) {
    require(frames.dims() == 4, ErrorCode::ShapeMismatch, "resize expects [F,C,H,W]");
    require(out_h >= 1 && out_w >= 1, ErrorCode::ShapeMismatch, "resize target must be positive");
    int64_t f_count = frames.dim(0), c = frames.dim(1), h = frames.dim(2), w = frames.dim(3);
    if (out_h == h && out_w == w) {
        return frames;
    }
    Tensor out({f_count, c, out_h, out_w});
    double sy = double(h) / double(out_h);
    double sx = double(w) / double(out_w);
    for (int64_t fc = 0; fc < f_count * c; ++fc) {
        const float* src = frames.data() + fc * h * w;
        float* dst = out.data() + fc * out_h * out_w;
        for (int64_t y = 0; y < out_h; ++y) {
            double fy = (double(y) + 0.5) * sy - 0.5;
            int64_t y0 = int64_t(std::floor(fy));
            double wy = fy - double(y0);
            int64_t y0c = std::clamp<int64_t>(y0, 0, h - 1);
            int64_t y1c = std::clamp<int64_t>(y0 + 1, 0, h - 1);
            for (int64_t x = 0; x < out_w; ++x) {
                double fx = (double(x) + 0.5) * sx - 0.5;
                int64_t x0 = int64_t(std::floor(fx));
                double wx = fx - double(x0);
                int64_t x0c = std::clamp<int64_t>(x0, 0, w - 1);
                int64_t x1c = std::clamp<int64_t>(x0 + 1, 0, w - 1);
                double top = (1.0 - wx) * src[y0c * w + x0c] + wx * src[y0c * w + x1c];
                double bot = (1.0 - wx) * src[y1c * w + x0c] + wx * src[y1c * w + x1c];
                dst[y * out_w + x] = float((1.0 - wy) * top + wy * bot);
            }
        }
    }
    return out;
}

Tensor crop_frames(const Tensor& frames, int64_t x0, int64_t y0, int64_t x1, int64_t y1) {
    require(frames.dims() == 4, ErrorCode::ShapeMismatch, "crop expects [F,C,H,W]");
    require(x0 >= 0 && y0 >= 0 && x1 <= frames.dim(3) && y1 <= frames.dim(2) && x0 < x1 &&
                y0 < y1,
            ErrorCode::ShapeMismatch, "crop rectangle out of bounds");
    int64_t f_count = frames.dim(0), c = frames.dim(1), h = frames.dim(2), w = frames.dim(3);
    Tensor out({f_count, c, y1 - y0, x1 - x0});
    for (int64_t fc = 0; fc < f_count * c; ++fc) {
        const float* src = frames.data() + fc * h * w;
        float* dst = out.data() + fc * (y1 - y0) * (x1 - x0);
        for (int64_t y = y0; y < y1; ++y) {
            std::copy(src + y * w + x0, src + y * w + x1, dst + (y - y0) * (x1 - x0));
        }
    }
    return out;
}

AudioTrack resample_audio(const AudioTrack& track, double target_rate) {
    require(target_rate > 0, ErrorCode::InvalidRate, "target rate must be positive");
    if (track.sample_rate == target_rate) {
        return track;
    }
    int64_t in_n = static_cast<int64_t>(track.samples.size());
    auto out_n = static_cast<int64_t>(std::llround(double(in_n) * target_rate / track.sample_rate));
    std::vector<float> out(static_cast<size_t>(out_n));
    double step = track.sample_rate / target_rate;
    for (int64_t i = 0; i < out_n; ++i) {
        double pos = double(i) * step;
        auto lo = static_cast<int64_t>(pos);
        if (lo >= in_n - 1) {
            out[static_cast<size_t>(i)] = track.samples.empty() ? 0.0f : track.samples.back();
            continue;
        }
        double frac = pos - double(lo);
        out[static_cast<size_t>(i)] =
            float((1.0 - frac) * track.samples[static_cast<size_t>(lo)] +
                  frac * track.samples[static_cast<size_t>(lo + 1)]);
    }
    return AudioTrack::create(std::move(out), target_rate);
}

}  // namespace lipsync
