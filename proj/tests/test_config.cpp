#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "lipsync/config.hpp"
#include "lipsync/errors.hpp"
#include "lipsync/hashing.hpp"
#include "synthetic.hpp"

using namespace lipsync;
namespace fs = std::filesystem;
namespace ts = testsupport;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("lipsync_cfg_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// A toy checkpoint for pipeline-level runs.
fs::path make_toy_checkpoint(const fs::path& dir, uint64_t seed = 5) {
    UNetConfig ucfg;
    ucfg.down_channels = {8, 16};
    ucfg.attn_heads = 2;
    ucfg.attn_max_resolution = 16;
    ucfg.latent_channels = 3;
    ucfg.audio_dim = 64;
    ucfg.audio_window = 2;
    ucfg.time_embed_dim = 16;
    ucfg.norm_groups = 4;
    TrainConfig tcfg;
    tcfg.frames_per_clip = 8;
    tcfg.resolution = 32;
    tcfg.seed = seed;
    Trainer trainer(ucfg, tcfg, CodecSpec{});
    fs::path path = dir / "toy.ckpt";
    trainer.save_checkpoint(path);
    return path;
}

}  // namespace

TEST_SUITE("config.parse") {
    TEST_CASE("empty config gets the documented defaults") {
        RunConfig cfg = parse_config_json("{}");
        // segmented-inference defaults
        CHECK(cfg.infer.params.guidance_scale == 3.0);
        CHECK(cfg.infer.params.steps == 15);
        CHECK(cfg.infer.params.overlap == 4);
        CHECK(cfg.infer.params.segment_len == 16);
        // training defaults
        CHECK(cfg.train.train.frames_per_clip == 16);
        CHECK(cfg.train.train.fps == 25.0);
        CHECK(cfg.train.train.lr == 6e-5);
        CHECK(cfg.train.train.p_audio == 0.05);
        CHECK(cfg.train.train.p_ref == 0.15);
        // curation defaults
        CHECK(cfg.curate.thresholds.face_side == 228.0);
        CHECK(cfg.curate.thresholds.min_seconds == 2.0);
        CHECK(cfg.curate.thresholds.max_face_gap == 8);
    }

    TEST_CASE("unknown keys are rejected with their field path") {
        try {
            parse_config_json(R"({"infer": {"overlapp": 4}})");
            FAIL("expected SCHEMA_ERROR");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::SchemaError);
            CHECK(std::string(e.what()).find("config.infer.overlapp") != std::string::npos);
        }
        CHECK_THROWS_AS(parse_config_json(R"({"bogus": 1})"), Error);
        CHECK_THROWS_AS(parse_config_json(R"({"train": {"unet": {"layers": 3}}})"), Error);
    }

    TEST_CASE("invariant violations are schema errors") {
        try {
            parse_config_json(R"({"infer": {"overlap": 16, "segment_len": 16}})");
            FAIL("expected SCHEMA_ERROR");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::SchemaError);
        }
        CHECK_THROWS_AS(parse_config_json(R"({"train": {"lr": -1.0}})"), Error);
        CHECK_THROWS_AS(parse_config_json(R"({"train": {"codec": {"kind": "vae"}}})"), Error);
        CHECK_THROWS_AS(parse_config_json(R"({"infer": "not an object"})"), Error);
    }

    TEST_CASE("config round trip: parse(serialize(c)) == c") {
        RunConfig cfg = parse_config_json(R"({
            "seed": 42,
            "out_root": "runs",
            "train": {"steps": 7, "lr": 0.001, "unet": {"down_channels": [8, 16]},
                      "codec": {"kind": "toy", "scale": 2, "latent_channels": 4}},
            "infer": {"scale": 2.5, "steps": 9},
            "evaluate": {"embedder": "moments"}
        })");
        std::string first = serialize_config(cfg);
        RunConfig reparsed = parse_config_json(first);
        CHECK(serialize_config(reparsed) == first);
        CHECK(config_hash(reparsed) == config_hash(cfg));
        CHECK(reparsed.train.train.steps == 7);
        CHECK(reparsed.train.codec.kind == "toy");
        CHECK(reparsed.infer.params.guidance_scale == 2.5);
    }

    TEST_CASE("subcommand seeds default to the global seed") {
        RunConfig cfg = parse_config_json(R"({"seed": 99})");
        CHECK(cfg.train.train.seed == 99);
        CHECK(cfg.infer.params.seed == 99);
        RunConfig explicit_seed = parse_config_json(R"({"seed": 99, "infer": {"seed": 7}})");
        CHECK(explicit_seed.infer.params.seed == 7);
    }

    TEST_CASE("output root resolution honors the environment override") {
        RunConfig cfg;
        cfg.out_root = "/configured";
        CHECK(resolve_output(cfg, "x/y.ckpt") == fs::path("/configured/x/y.ckpt"));
        CHECK(resolve_output(cfg, "/absolute/y.ckpt") == fs::path("/absolute/y.ckpt"));
        setenv("LIPSYNC_OUT_ROOT", "/env_root", 1);
        CHECK(resolve_output(cfg, "x.ckpt") == fs::path("/env_root/x.ckpt"));
        unsetenv("LIPSYNC_OUT_ROOT");
    }
}

TEST_SUITE("config.dispatch") {
    TEST_CASE("evaluate on identical directories reports fid 0 and exits 0") {
        auto dir = fresh_dir("dispatch_eval");
        Rng rng(1);
        Tensor frames = Tensor::rand({3, 3, 16, 16}, rng);
        save_video(VideoClip::create(frames, 25.0), dir / "gen" / "clip0");
        save_video(VideoClip::create(frames, 25.0), dir / "ref" / "clip0");
        RunConfig cfg;
        cfg.evaluate.gen = (dir / "gen").string();
        cfg.evaluate.ref = (dir / "ref").string();
        cfg.evaluate.report = (dir / "report.json").string();
        CHECK(dispatch(cfg, "evaluate") == 0);
        std::ifstream in(dir / "report.json");
        nlohmann::json report;
        in >> report;
        CHECK(report["aggregate"]["fid"].get<double>() <= 1e-6);
        CHECK(report["aggregate"]["ssim"].get<double>() == doctest::Approx(1.0));
        // the run manifest is sufficient to re-execute the run
        std::ifstream min(dir / "run_manifest.json");
        nlohmann::json manifest;
        min >> manifest;
        CHECK(manifest["subcommand"] == "evaluate");
        CHECK(manifest["config"]["evaluate"]["gen"] == cfg.evaluate.gen);
        CHECK(manifest.contains("config_hash"));
        CHECK(manifest.contains("wall_time_seconds"));
    }

    TEST_CASE("missing checkpoint surfaces a nonzero status") {
        RunConfig cfg;
        cfg.infer.video = "/nonexistent";
        cfg.infer.audio = "/nonexistent.wav";
        cfg.infer.checkpoint = "/nonexistent.ckpt";
        cfg.infer.out = "/tmp/lipsync_never";
        CHECK(dispatch(cfg, "infer") != 0);
        CHECK(dispatch(cfg, "unknown-subcommand") != 0);
    }

    TEST_CASE("two infer dispatches with one seed give identical artifact hashes") {
        auto dir = fresh_dir("dispatch_infer");
        fs::path ckpt = make_toy_checkpoint(dir);

        ts::SynthSpec spec;
        spec.frames = 18;
        spec.resolution = 48;
        LandmarkSequence landmarks;
        VideoClip source = ts::synth_talking_clip(spec, &landmarks, false);
        save_video(source, dir / "source");
        save_landmarks(landmarks, dir / "landmarks.json");
        ts::SynthSpec audio_spec = spec;
        audio_spec.frames = 20;
        VideoClip donor = ts::synth_talking_clip(audio_spec, nullptr);
        save_wav(*donor.audio, dir / "audio.wav");

        RunConfig cfg;
        cfg.seed = 77;
        cfg.infer.params.seed = 77;
        cfg.infer.params.steps = 2;
        cfg.infer.video = (dir / "source").string();
        cfg.infer.audio = (dir / "audio.wav").string();
        cfg.infer.landmarks = (dir / "landmarks.json").string();
        cfg.infer.checkpoint = ckpt.string();

        auto run_and_hash = [&](const std::string& out_name) {
            cfg.infer.out = (dir / out_name).string();
            REQUIRE(dispatch(cfg, "infer") == 0);
            uint64_t h = 0;
            std::vector<fs::path> pngs;
            for (const auto& e : fs::directory_iterator(dir / out_name)) {
                if (e.path().extension() == ".png") {
                    pngs.push_back(e.path());
                }
            }
            std::sort(pngs.begin(), pngs.end());
            CHECK(!pngs.empty());
            for (const auto& p : pngs) {
                h = fnv1a64(p.filename().string()) ^ (h * 31) ^ file_hash(p);
            }
            return h;
        };
        uint64_t first = run_and_hash("out_a");
        uint64_t second = run_and_hash("out_b");
        CHECK(first == second);
    }
}

#ifdef LIPSYNC_CLI_PATH
TEST_SUITE("config.cli") {
    TEST_CASE("the binary honors the documented exit statuses") {
        std::string cli = LIPSYNC_CLI_PATH;
        CHECK(std::system((cli + " --help > /dev/null 2>&1").c_str()) == 0);
        // missing checkpoint: nonzero with a clear message
        CHECK(std::system((cli + " infer --video /n --audio /n.wav --checkpoint /n.ckpt"
                                 " --out /tmp/lipsync_cli_never > /dev/null 2>&1")
                              .c_str()) != 0);
        // unknown flag: nonzero
        CHECK(std::system((cli + " evaluate --bogus 2>/dev/null").c_str()) != 0);
    }

    TEST_CASE("evaluate subcommand runs end to end") {
        auto dir = fresh_dir("cli_eval");
        Rng rng(2);
        Tensor frames = Tensor::rand({2, 3, 16, 16}, rng);
        save_video(VideoClip::create(frames, 25.0), dir / "gen" / "c");
        save_video(VideoClip::create(frames, 25.0), dir / "ref" / "c");
        std::string cli = LIPSYNC_CLI_PATH;
        std::string cmd = cli + " evaluate --gen " + (dir / "gen").string() + " --ref " +
                          (dir / "ref").string() + " --report " +
                          (dir / "r.json").string() + " > /dev/null 2>&1";
        CHECK(std::system(cmd.c_str()) == 0);
        CHECK(fs::exists(dir / "r.json"));
        CHECK(fs::exists(dir / "r.csv"));
    }
}
#endif
