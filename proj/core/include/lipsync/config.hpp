#pragma once

#include <filesystem>
#include <string>

#include "lipsync/curation.hpp"
#include "lipsync/inference.hpp"
#include "lipsync/training.hpp"

namespace lipsync {

extern const char* kVersionString;

struct TrainRunConfig {
    TrainConfig train;
    UNetConfig unet;
    CodecSpec codec;
    std::string manifest;
    std::string checkpoint_out = "model.ckpt";
    std::string resume;
    int64_t log_every = 10;
};

struct InferRunConfig {
    InferenceConfig params;
    std::string video;
    std::string audio;
    std::string checkpoint;
    std::string out;
    std::string landmarks;  // JSON per-frame [x,y] pairs or null
};

struct CurateRunConfig {
    CurationThresholds thresholds;
    std::string in_dir;
    std::string out_dir;
    std::string manifest = "curation.jsonl";
};

struct EvaluateRunConfig {
    std::string gen;
    std::string ref;
    std::string report = "report.json";
    std::string embedder = "mean";  // mean | moments | cmd:<executable>
    std::string lpips_cmd;
    std::string sync_cmd;
};

// The full run configuration: one block per subcommand plus the global seed
// and output root. Schema-validated; unknown keys are rejected with their
// field path.
struct RunConfig {
    uint64_t seed = 0;
    std::string out_root;  // env LIPSYNC_OUT_ROOT overrides
    TrainRunConfig train;
    InferRunConfig infer;
    CurateRunConfig curate;
    EvaluateRunConfig evaluate;
};

RunConfig parse_config_json(const std::string& text);
RunConfig parse_config_file(const std::filesystem::path& path);
std::string serialize_config(const RunConfig& config);
uint64_t config_hash(const RunConfig& config);

// Executes one subcommand pipeline and writes a run manifest (config echo and
// hash, seed, version, wall time, artifact paths) next to its outputs.
// Returns a process exit status; module errors surface as nonzero.
int dispatch(const RunConfig& config, const std::string& subcommand);

// Resolves an output path against the configured root (or LIPSYNC_OUT_ROOT).
std::filesystem::path resolve_output(const RunConfig& config, const std::string& path);

CurationThresholds parse_thresholds_file(const std::filesystem::path& path);

}  // namespace lipsync
