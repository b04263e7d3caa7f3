// Command-line entry point: train / infer / curate / evaluate subcommands over
// a JSON run configuration, with flags overriding config-file values.

#include "CLI11.hpp"

#include <iostream>
#include <string>

#include "lipsync/config.hpp"
#include "lipsync/errors.hpp"

using lipsync::RunConfig;

namespace {

struct FlagValues {
    std::string config_path;
    // train
    std::string manifest, checkpoint_out, resume;
    int64_t steps = 0, batch_size = 0, frames = 0, resolution = 0;
    double lr = 0;
    uint64_t seed = 0;
    // infer
    std::string video, audio, checkpoint, out, landmarks;
    double scale = 0;
    int infer_steps = 0;
    int64_t overlap = 0, segment_len = 0;
    bool ref_first = false;
    // curate
    std::string in_dir, curate_out, curate_manifest, thresholds_file;
    // evaluate
    std::string gen, ref, report, embedder, lpips_cmd, sync_cmd;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"audio-driven lip synchronization via conditional video diffusion"};
    app.require_subcommand(1);
    FlagValues v;

    auto add_config = [&](CLI::App* cmd) {
        cmd->add_option("--config", v.config_path, "JSON run configuration file");
        cmd->add_option("--seed", v.seed, "global seed override");
    };

    CLI::App* train = app.add_subcommand("train", "train the denoiser and ID guider");
    add_config(train);
    train->add_option("--manifest", v.manifest, "dataset manifest (JSON lines)");
    train->add_option("--checkpoint-out", v.checkpoint_out, "checkpoint output path");
    train->add_option("--resume", v.resume, "checkpoint to resume from");
    train->add_option("--steps", v.steps, "training steps");
    train->add_option("--batch", v.batch_size, "batch size");
    train->add_option("--frames", v.frames, "frames per training clip");
    train->add_option("--resolution", v.resolution, "training resolution");
    train->add_option("--lr", v.lr, "learning rate");

    CLI::App* infer = app.add_subcommand("infer", "lip-sync a video to an audio track");
    add_config(infer);
    infer->add_option("--video", v.video, "input video (frame dir or container)");
    infer->add_option("--audio", v.audio, "driving audio (WAV)");
    infer->add_option("--checkpoint", v.checkpoint, "trained checkpoint");
    infer->add_option("--out", v.out, "output clip directory");
    infer->add_option("--landmarks", v.landmarks, "per-frame lip landmarks JSON");
    infer->add_option("--scale", v.scale, "guidance scale");
    infer->add_option("--steps", v.infer_steps, "denoising steps");
    infer->add_option("--overlap", v.overlap, "segment overlap frames");
    infer->add_option("--segment-len", v.segment_len, "segment length");
    infer->add_flag("--ref-first", v.ref_first, "use the first frame as the reference");

    CLI::App* curate = app.add_subcommand("curate", "filter a raw corpus into curated clips");
    add_config(curate);
    curate->add_option("--in", v.in_dir, "directory of source clips");
    curate->add_option("--out", v.curate_out, "directory for surviving clips");
    curate->add_option("--manifest", v.curate_manifest, "manifest output (JSON lines)");
    curate->add_option("--thresholds", v.thresholds_file, "JSON thresholds file");

    CLI::App* evaluate = app.add_subcommand("evaluate", "compare generated and reference clips");
    add_config(evaluate);
    evaluate->add_option("--gen", v.gen, "generated clips directory");
    evaluate->add_option("--ref", v.ref, "reference clips directory");
    evaluate->add_option("--report", v.report, "report output path (JSON)");
    evaluate->add_option("--embedder", v.embedder, "mean | moments | cmd:<executable>");
    evaluate->add_option("--lpips-cmd", v.lpips_cmd, "pairwise perceptual-score adapter");
    evaluate->add_option("--sync-cmd", v.sync_cmd, "pairwise sync-score adapter");

    CLI11_PARSE(app, argc, argv);
    CLI::App* sub = app.get_subcommands().front();

    try {
        RunConfig cfg = v.config_path.empty() ? RunConfig{}
                                              : lipsync::parse_config_file(v.config_path);
        auto given = [&](const char* name) { return sub->count(name) > 0; };
        if (given("--seed")) {
            cfg.seed = v.seed;
            cfg.train.train.seed = v.seed;
            cfg.infer.params.seed = v.seed;
        }
        if (sub == train) {
            if (given("--manifest")) cfg.train.manifest = v.manifest;
            if (given("--checkpoint-out")) cfg.train.checkpoint_out = v.checkpoint_out;
            if (given("--resume")) cfg.train.resume = v.resume;
            if (given("--steps")) cfg.train.train.steps = v.steps;
            if (given("--batch")) cfg.train.train.batch_size = v.batch_size;
            if (given("--frames")) cfg.train.train.frames_per_clip = v.frames;
            if (given("--resolution")) cfg.train.train.resolution = v.resolution;
            if (given("--lr")) cfg.train.train.lr = v.lr;
            cfg.train.train.validate();
        } else if (sub == infer) {
            if (given("--video")) cfg.infer.video = v.video;
            if (given("--audio")) cfg.infer.audio = v.audio;
            if (given("--checkpoint")) cfg.infer.checkpoint = v.checkpoint;
            if (given("--out")) cfg.infer.out = v.out;
            if (given("--landmarks")) cfg.infer.landmarks = v.landmarks;
            if (given("--scale")) cfg.infer.params.guidance_scale = v.scale;
            if (given("--steps")) cfg.infer.params.steps = v.infer_steps;
            if (given("--overlap")) cfg.infer.params.overlap = v.overlap;
            if (given("--segment-len")) cfg.infer.params.segment_len = v.segment_len;
            if (given("--ref-first")) cfg.infer.params.ref_first_frame = v.ref_first;
            cfg.infer.params.validate();
        } else if (sub == curate) {
            if (given("--in")) cfg.curate.in_dir = v.in_dir;
            if (given("--out")) cfg.curate.out_dir = v.curate_out;
            if (given("--manifest")) cfg.curate.manifest = v.curate_manifest;
            if (given("--thresholds")) {
                cfg.curate.thresholds = lipsync::parse_thresholds_file(v.thresholds_file);
            }
        } else if (sub == evaluate) {
            if (given("--gen")) cfg.evaluate.gen = v.gen;
            if (given("--ref")) cfg.evaluate.ref = v.ref;
            if (given("--report")) cfg.evaluate.report = v.report;
            if (given("--embedder")) cfg.evaluate.embedder = v.embedder;
            if (given("--lpips-cmd")) cfg.evaluate.lpips_cmd = v.lpips_cmd;
            if (given("--sync-cmd")) cfg.evaluate.sync_cmd = v.sync_cmd;
        }
        return lipsync::dispatch(cfg, sub->get_name());
    } catch (const lipsync::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
