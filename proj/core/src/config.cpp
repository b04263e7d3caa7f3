#include "lipsync/config.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "config_json.hpp"

#include "lipsync/errors.hpp"
#include "lipsync/hashing.hpp"
#include "lipsync/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lipsync {

const char* kVersionString = "0.1.0";

namespace {

void check_keys(const json& obj, const std::vector<std::string>& allowed,
                const std::string& path) {
    require(obj.is_object(), ErrorCode::SchemaError, path + " must be an object");
    for (const auto& [key, value] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            raise(ErrorCode::SchemaError, "unknown key '" + path + "." + key + "'");
        }
    }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out, const std::string& path) {
    if (!obj.contains(key)) {
        return;
    }
    try {
        obj.at(key).get_to(out);
    } catch (const json::exception& e) {
        raise(ErrorCode::SchemaError, path + "." + key + ": " + e.what());
    }
}

void parse_train_block(const json& obj, TrainRunConfig& out, const std::string& path) {
    check_keys(obj, {"frames_per_clip", "fps", "resolution", "lr", "batch_size", "steps",
                     "p_audio", "p_ref", "seed", "pad_ratio", "smooth_alpha",
                     "max_landmark_gap", "sigma_data", "sigma_mean_log", "sigma_std_log",
                     "grad_clip", "weight_decay", "unet", "codec", "manifest",
                     "checkpoint_out", "resume", "log_every"},
               path);
    read_field(obj, "frames_per_clip", out.train.frames_per_clip, path);
    read_field(obj, "fps", out.train.fps, path);
    read_field(obj, "resolution", out.train.resolution, path);
    read_field(obj, "lr", out.train.lr, path);
    read_field(obj, "batch_size", out.train.batch_size, path);
    read_field(obj, "steps", out.train.steps, path);
    read_field(obj, "p_audio", out.train.p_audio, path);
    read_field(obj, "p_ref", out.train.p_ref, path);
    read_field(obj, "seed", out.train.seed, path);
    read_field(obj, "pad_ratio", out.train.pad_ratio, path);
    read_field(obj, "smooth_alpha", out.train.smooth_alpha, path);
    read_field(obj, "max_landmark_gap", out.train.max_landmark_gap, path);
    read_field(obj, "sigma_data", out.train.sigma_data, path);
    read_field(obj, "sigma_mean_log", out.train.sigma_mean_log, path);
    read_field(obj, "sigma_std_log", out.train.sigma_std_log, path);
    read_field(obj, "grad_clip", out.train.grad_clip, path);
    read_field(obj, "weight_decay", out.train.weight_decay, path);
    if (obj.contains("unet")) {
        check_keys(obj.at("unet"),
                   {"down_channels", "num_res_blocks", "attn_heads", "attn_max_resolution",
                    "temporal_attention", "latent_channels", "audio_dim", "audio_window",
                    "time_embed_dim", "norm_groups"},
                   path + ".unet");
        const json& u = obj.at("unet");
        read_field(u, "down_channels", out.unet.down_channels, path + ".unet");
        read_field(u, "num_res_blocks", out.unet.num_res_blocks, path + ".unet");
        read_field(u, "attn_heads", out.unet.attn_heads, path + ".unet");
        read_field(u, "attn_max_resolution", out.unet.attn_max_resolution, path + ".unet");
        read_field(u, "temporal_attention", out.unet.temporal_attention, path + ".unet");
        read_field(u, "latent_channels", out.unet.latent_channels, path + ".unet");
        read_field(u, "audio_dim", out.unet.audio_dim, path + ".unet");
        read_field(u, "audio_window", out.unet.audio_window, path + ".unet");
        read_field(u, "time_embed_dim", out.unet.time_embed_dim, path + ".unet");
        read_field(u, "norm_groups", out.unet.norm_groups, path + ".unet");
    }
    if (obj.contains("codec")) {
        check_keys(obj.at("codec"), {"kind", "scale", "latent_channels", "seed"},
                   path + ".codec");
        const json& c = obj.at("codec");
        read_field(c, "kind", out.codec.kind, path + ".codec");
        read_field(c, "scale", out.codec.scale, path + ".codec");
        read_field(c, "latent_channels", out.codec.latent_channels, path + ".codec");
        read_field(c, "seed", out.codec.seed, path + ".codec");
    }
    read_field(obj, "manifest", out.manifest, path);
    read_field(obj, "checkpoint_out", out.checkpoint_out, path);
    read_field(obj, "resume", out.resume, path);
    read_field(obj, "log_every", out.log_every, path);
}

void parse_infer_block(const json& obj, InferRunConfig& out, const std::string& path) {
    check_keys(obj, {"video", "audio", "checkpoint", "out", "landmarks", "segment_len",
                     "overlap", "scale", "steps", "bbox_expand_ratio", "bbox_smooth_alpha",
                     "dilation_px", "junction_smooth_frames", "seed", "ref_first_frame",
                     "sigma_data", "sigma_min", "sigma_max", "rho", "pad_ratio",
                     "max_landmark_gap"},
               path);
    read_field(obj, "video", out.video, path);
    read_field(obj, "audio", out.audio, path);
    read_field(obj, "checkpoint", out.checkpoint, path);
    read_field(obj, "out", out.out, path);
    read_field(obj, "landmarks", out.landmarks, path);
    read_field(obj, "segment_len", out.params.segment_len, path);
    read_field(obj, "overlap", out.params.overlap, path);
    read_field(obj, "scale", out.params.guidance_scale, path);
    read_field(obj, "steps", out.params.steps, path);
    read_field(obj, "bbox_expand_ratio", out.params.bbox_expand_ratio, path);
    read_field(obj, "bbox_smooth_alpha", out.params.bbox_smooth_alpha, path);
    read_field(obj, "dilation_px", out.params.dilation_px, path);
    read_field(obj, "junction_smooth_frames", out.params.junction_smooth_frames, path);
    read_field(obj, "seed", out.params.seed, path);
    read_field(obj, "ref_first_frame", out.params.ref_first_frame, path);
    read_field(obj, "sigma_data", out.params.sigma_data, path);
    read_field(obj, "sigma_min", out.params.sigma_min, path);
    read_field(obj, "sigma_max", out.params.sigma_max, path);
    read_field(obj, "rho", out.params.rho, path);
    read_field(obj, "pad_ratio", out.params.pad_ratio, path);
    read_field(obj, "max_landmark_gap", out.params.max_landmark_gap, path);
}

void parse_curate_block(const json& obj, CurateRunConfig& out, const std::string& path) {
    check_keys(obj, {"in", "out", "manifest", "thresholds"}, path);
    read_field(obj, "in", out.in_dir, path);
    read_field(obj, "out", out.out_dir, path);
    read_field(obj, "manifest", out.manifest, path);
    if (obj.contains("thresholds")) {
        check_keys(obj.at("thresholds"),
                   {"face_side", "min_seconds", "max_face_gap", "quality_min",
                    "jitter_displacement"},
                   path + ".thresholds");
        const json& t = obj.at("thresholds");
        read_field(t, "face_side", out.thresholds.face_side, path + ".thresholds");
        read_field(t, "min_seconds", out.thresholds.min_seconds, path + ".thresholds");
        read_field(t, "max_face_gap", out.thresholds.max_face_gap, path + ".thresholds");
        read_field(t, "quality_min", out.thresholds.quality_min, path + ".thresholds");
        read_field(t, "jitter_displacement", out.thresholds.jitter_displacement,
                   path + ".thresholds");
    }
}

void parse_evaluate_block(const json& obj, EvaluateRunConfig& out, const std::string& path) {
    check_keys(obj, {"gen", "ref", "report", "embedder", "lpips_cmd", "sync_cmd"}, path);
    read_field(obj, "gen", out.gen, path);
    read_field(obj, "ref", out.ref, path);
    read_field(obj, "report", out.report, path);
    read_field(obj, "embedder", out.embedder, path);
    read_field(obj, "lpips_cmd", out.lpips_cmd, path);
    read_field(obj, "sync_cmd", out.sync_cmd, path);
}

}  // namespace

RunConfig parse_config_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        raise(ErrorCode::SchemaError, std::string("config is not valid JSON: ") + e.what());
    }
    check_keys(doc, {"seed", "out_root", "train", "infer", "curate", "evaluate"}, "config");
    RunConfig config;
    read_field(doc, "seed", config.seed, "config");
    read_field(doc, "out_root", config.out_root, "config");
    // subcommand seeds default to the global seed unless given explicitly
    config.train.train.seed = config.seed;
    config.infer.params.seed = config.seed;
    if (doc.contains("train")) {
        parse_train_block(doc.at("train"), config.train, "config.train");
    }
    if (doc.contains("infer")) {
        parse_infer_block(doc.at("infer"), config.infer, "config.infer");
    }
    if (doc.contains("curate")) {
        parse_curate_block(doc.at("curate"), config.curate, "config.curate");
    }
    if (doc.contains("evaluate")) {
        parse_evaluate_block(doc.at("evaluate"), config.evaluate, "config.evaluate");
    }
    // schema validation before any work
    config.train.train.validate();
    config.train.unet.validate();
    config.train.codec.validate();
    config.infer.params.validate();
    return config;
}

RunConfig parse_config_file(const fs::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::IoFailure, "cannot open config " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_json(text);
}

std::string serialize_config(const RunConfig& config) {
    json train;
    to_json(train, config.train.train);
    train.erase("seed");
    json unet;
    to_json(unet, config.train.unet);
    json codec;
    to_json(codec, config.train.codec);
    train["seed"] = config.train.train.seed;
    train["unet"] = unet;
    train["codec"] = codec;
    train["manifest"] = config.train.manifest;
    train["checkpoint_out"] = config.train.checkpoint_out;
    train["resume"] = config.train.resume;
    train["log_every"] = config.train.log_every;

    const InferenceConfig& p = config.infer.params;
    json infer{{"video", config.infer.video},
               {"audio", config.infer.audio},
               {"checkpoint", config.infer.checkpoint},
               {"out", config.infer.out},
               {"landmarks", config.infer.landmarks},
               {"segment_len", p.segment_len},
               {"overlap", p.overlap},
               {"scale", p.guidance_scale},
               {"steps", p.steps},
               {"bbox_expand_ratio", p.bbox_expand_ratio},
               {"bbox_smooth_alpha", p.bbox_smooth_alpha},
               {"dilation_px", p.dilation_px},
               {"junction_smooth_frames", p.junction_smooth_frames},
               {"seed", p.seed},
               {"ref_first_frame", p.ref_first_frame},
               {"sigma_data", p.sigma_data},
               {"sigma_min", p.sigma_min},
               {"sigma_max", p.sigma_max},
               {"rho", p.rho},
               {"pad_ratio", p.pad_ratio},
               {"max_landmark_gap", p.max_landmark_gap}};

    json curate{{"in", config.curate.in_dir},
                {"out", config.curate.out_dir},
                {"manifest", config.curate.manifest},
                {"thresholds",
                 {{"face_side", config.curate.thresholds.face_side},
                  {"min_seconds", config.curate.thresholds.min_seconds},
                  {"max_face_gap", config.curate.thresholds.max_face_gap},
                  {"quality_min", config.curate.thresholds.quality_min},
                  {"jitter_displacement", config.curate.thresholds.jitter_displacement}}}};

    json evaluate{{"gen", config.evaluate.gen},       {"ref", config.evaluate.ref},
                  {"report", config.evaluate.report}, {"embedder", config.evaluate.embedder},
                  {"lpips_cmd", config.evaluate.lpips_cmd},
                  {"sync_cmd", config.evaluate.sync_cmd}};

    json doc{{"seed", config.seed}, {"out_root", config.out_root}, {"train", train},
             {"infer", infer},      {"curate", curate},            {"evaluate", evaluate}};
    return doc.dump(2);
}

uint64_t config_hash(const RunConfig& config) { return fnv1a64(serialize_config(config)); }

CurationThresholds parse_thresholds_file(const fs::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::IoFailure, "cannot open thresholds " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        raise(ErrorCode::SchemaError, std::string("bad thresholds JSON: ") + e.what());
    }
    check_keys(doc, {"face_side", "min_seconds", "max_face_gap", "quality_min",
                     "jitter_displacement"},
               "thresholds");
    CurationThresholds t;
    read_field(doc, "face_side", t.face_side, "thresholds");
    read_field(doc, "min_seconds", t.min_seconds, "thresholds");
    read_field(doc, "max_face_gap", t.max_face_gap, "thresholds");
    read_field(doc, "quality_min", t.quality_min, "thresholds");
    read_field(doc, "jitter_displacement", t.jitter_displacement, "thresholds");
    return t;
}

fs::path resolve_output(const RunConfig& config, const std::string& path) {
    std::string root = config.out_root;
    if (const char* env = std::getenv("LIPSYNC_OUT_ROOT")) {
        root = env;
    }
    fs::path p(path);
    if (!root.empty() && p.is_relative()) {
        return fs::path(root) / p;
    }
    return p;
}

namespace {

void write_run_manifest(const RunConfig& config, const std::string& subcommand,
                        const fs::path& dir, double wall_seconds,
                        const std::vector<std::string>& artifacts) {
    json doc;
    doc["subcommand"] = subcommand;
    doc["version"] = kVersionString;
    doc["seed"] = config.seed;
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(config_hash(config)));
    doc["config_hash"] = hex;
    doc["config"] = json::parse(serialize_config(config));
    doc["wall_time_seconds"] = wall_seconds;
    doc["artifacts"] = artifacts;
    std::error_code ec;
    fs::create_directories(dir, ec);
    std::ofstream out(dir / "run_manifest.json");
    require(out.good(), ErrorCode::IoFailure,
            "cannot write run manifest in " + dir.string());
    out << doc.dump(2) << "\n";
}

// Lip landmarks from a face box when no landmark file is given: a small
// quad around the lower-middle of the detected face.
LandmarkSequence landmarks_from_detector(const VideoClip& clip, const DetectorAdapter& detector) {
    LandmarkSequence seq;
    for (int64_t f = 0; f < clip.frame_count(); ++f) {
        std::vector<BoundingBox> boxes = detector.detect(clip.frame(f));
        if (boxes.empty()) {
            seq.points.emplace_back(std::nullopt);
            continue;
        }
        const BoundingBox* best = &boxes[0];
        for (const BoundingBox& b : boxes) {
            if (b.area() > best->area()) {
                best = &b;
            }
        }
        double cx = best->center_x();
        double my = best->y0 + 0.75 * best->height();
        double half_w = best->width() / 6.0;
        double half_h = best->height() / 12.0;
        seq.points.push_back(std::vector<Point2>{{cx - half_w, my},
                                                 {cx + half_w, my},
                                                 {cx, my - half_h},
                                                 {cx, my + half_h}});
    }
    return seq;
}

std::vector<std::string> run_train_command(const RunConfig& config) {
    const TrainRunConfig& tc = config.train;
    require(!tc.manifest.empty(), ErrorCode::SchemaError, "train.manifest is required");
    MelStubExtractor extractor(16000.0, tc.unet.audio_dim);
    std::vector<ManifestEntry> entries = load_dataset_manifest(tc.manifest);
    std::vector<ClipRecord> dataset;
    for (const auto& entry : entries) {
        if (entry.filters_passed) {
            dataset.push_back(load_clip_record(entry, extractor));
        }
    }
    require(!dataset.empty(), ErrorCode::ConfigMismatch, "no usable clips in the manifest");

    std::unique_ptr<Trainer> trainer;
    if (!tc.resume.empty()) {
        trainer = Trainer::load_checkpoint(tc.resume);
    } else {
        trainer = std::make_unique<Trainer>(tc.unet, tc.train, tc.codec);
    }
    for (int64_t i = 0; i < tc.train.steps; ++i) {
        StepResult r = trainer->train_step(dataset);
        if (tc.log_every > 0 && trainer->step_count() % tc.log_every == 0) {
            std::cout << "step " << trainer->step_count() << " loss " << r.loss << " |grad| "
                      << r.grad_norm << "\n";
        }
    }
    fs::path out = resolve_output(config, tc.checkpoint_out);
    if (out.has_parent_path()) {
        fs::create_directories(out.parent_path());
    }
    trainer->save_checkpoint(out);
    std::cout << "checkpoint written to " << out << "\n";
    return {out.string()};
}

std::vector<std::string> run_infer_command(const RunConfig& config) {
    const InferRunConfig& ic = config.infer;
    require(!ic.video.empty(), ErrorCode::SchemaError, "infer.video is required");
    require(!ic.audio.empty(), ErrorCode::SchemaError, "infer.audio is required");
    require(!ic.checkpoint.empty(), ErrorCode::SchemaError, "infer.checkpoint is required");
    require(!ic.out.empty(), ErrorCode::SchemaError, "infer.out is required");

    std::unique_ptr<Trainer> trainer = Trainer::load_checkpoint(ic.checkpoint);
    MelStubExtractor extractor(16000.0, trainer->unet_config().audio_dim);
    VideoClip video = load_video(ic.video);
    AudioTrack audio = load_wav(ic.audio);

    LandmarkSequence landmarks;
    if (!ic.landmarks.empty()) {
        landmarks = load_landmarks(ic.landmarks);
    } else {
        LuminanceDetector detector;
        landmarks = landmarks_from_detector(video, detector);
    }

    InferenceAssets assets{&trainer->net(), &trainer->guider(), &trainer->codec(), &extractor,
                           trainer->config().resolution};
    VideoClip result = infer(video, audio, landmarks, assets, ic.params);
    fs::path out = resolve_output(config, ic.out);
    save_video(result, out);
    std::cout << "wrote " << result.frame_count() << " frames to " << out << "\n";
    return {out.string()};
}

std::vector<std::string> run_curate_command(const RunConfig& config) {
    const CurateRunConfig& cc = config.curate;
    require(!cc.in_dir.empty(), ErrorCode::SchemaError, "curate.in is required");
    std::vector<fs::path> sources;
    require(fs::is_directory(cc.in_dir), ErrorCode::IoFailure,
            "curate.in is not a directory: " + cc.in_dir);
    for (const auto& entry : fs::directory_iterator(cc.in_dir)) {
        if (entry.is_directory() || entry.path().extension() != ".json") {
            sources.push_back(entry.path());
        }
    }
    std::sort(sources.begin(), sources.end());

    LuminanceDetector detector;
    SharpnessQuality quality;
    EnergyAlignment alignment;
    CurationAdapters adapters{&detector, &quality, &alignment};
    fs::path out_dir = cc.out_dir.empty() ? fs::path() : resolve_output(config, cc.out_dir);
    CurationManifest manifest = run_pipeline(sources, adapters, cc.thresholds, out_dir);
    fs::path manifest_path = resolve_output(config, cc.manifest);
    if (manifest_path.has_parent_path()) {
        fs::create_directories(manifest_path.parent_path());
    }
    save_manifest(manifest, manifest_path);
    std::cout << "curated " << sources.size() << " sources; " << manifest.survivors().size()
              << " surviving clips; manifest at " << manifest_path << "\n";
    return {manifest_path.string()};
}

std::vector<std::string> run_evaluate_command(const RunConfig& config) {
    const EvaluateRunConfig& ec = config.evaluate;
    require(!ec.gen.empty() && !ec.ref.empty(), ErrorCode::SchemaError,
            "evaluate.gen and evaluate.ref are required");

    MeanPixelEmbedder mean_embedder;
    ChannelMomentsEmbedder moments_embedder;
    std::unique_ptr<CommandFrameEmbedder> cmd_frames;
    std::unique_ptr<CommandClipEmbedder> cmd_clips;
    EvaluateOptions options;
    if (ec.embedder == "mean") {
        options.frame_embedder = &mean_embedder;
    } else if (ec.embedder == "moments") {
        options.frame_embedder = &moments_embedder;
    } else if (ec.embedder.rfind("cmd:", 0) == 0) {
        std::string cmd = ec.embedder.substr(4);
        cmd_frames = std::make_unique<CommandFrameEmbedder>(cmd);
        cmd_clips = std::make_unique<CommandClipEmbedder>(cmd);
        options.frame_embedder = cmd_frames.get();
        options.clip_embedder = cmd_clips.get();
    } else {
        raise(ErrorCode::SchemaError,
              "evaluate.embedder must be mean, moments, or cmd:<executable>");
    }
    std::unique_ptr<CommandPairScorer> lpips, sync;
    if (!ec.lpips_cmd.empty()) {
        lpips = std::make_unique<CommandPairScorer>(ec.lpips_cmd);
        options.lpips = lpips.get();
    }
    if (!ec.sync_cmd.empty()) {
        sync = std::make_unique<CommandPairScorer>(ec.sync_cmd);
        options.sync = sync.get();
    }

    MetricReport report = evaluate_pairs(ec.gen, ec.ref, options);
    report.config_echo = serialize_config(config);
    fs::path report_path = resolve_output(config, ec.report);
    if (report_path.has_parent_path()) {
        fs::create_directories(report_path.parent_path());
    }
    save_report_json(report, report_path);
    fs::path csv_path = report_path;
    csv_path.replace_extension(".csv");
    save_report_csv(report, csv_path);
    std::cout << "pairs " << report.pairs.size() << " ssim " << report.mean_ssim << " psnr "
              << report.mean_psnr << " fid " << report.fid << " fvd " << report.fvd << "\n";
    return {report_path.string(), csv_path.string()};
}

}  // namespace

int dispatch(const RunConfig& config, const std::string& subcommand) {
    auto started = std::chrono::steady_clock::now();
    try {
        std::vector<std::string> artifacts;
        if (subcommand == "train") {
            artifacts = run_train_command(config);
        } else if (subcommand == "infer") {
            artifacts = run_infer_command(config);
        } else if (subcommand == "curate") {
            artifacts = run_curate_command(config);
        } else if (subcommand == "evaluate") {
            artifacts = run_evaluate_command(config);
        } else {
            raise(ErrorCode::SchemaError, "unknown subcommand '" + subcommand + "'");
        }
        double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
                          .count();
        fs::path manifest_dir = artifacts.empty() ? fs::current_path()
                                                  : fs::path(artifacts[0]).parent_path();
        if (manifest_dir.empty()) {
            manifest_dir = fs::current_path();
        }
        if (subcommand == "infer") {
            manifest_dir = artifacts[0];  // the output clip directory
        }
        write_run_manifest(config, subcommand, manifest_dir, wall, artifacts);
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace lipsync
