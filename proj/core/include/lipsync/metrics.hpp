#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lipsync/media.hpp"

namespace lipsync {

// 10*log10(peak^2 / MSE); +infinity when the inputs are identical.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

// Mean local SSIM with the standard luminance/contrast/structure product,
// uniform window, valid positions only. Inputs are [F, C, H, W].
double ssim(const Tensor& a, const Tensor& b, int64_t window = 7, double k1 = 0.01,
            double k2 = 0.03, double peak = 1.0);

struct FrechetStats {
    std::vector<double> mean;
    std::vector<double> cov;  // row-major [dim, dim]
    int64_t dim = 0;
    int64_t count = 0;
};

// Gaussian fit with the unbiased covariance estimate.
FrechetStats compute_stats(const std::vector<std::vector<double>>& samples);

// ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa Sb)^{1/2}); matrix square roots via
// eigendecomposition with eigenvalues clamped at zero.
double frechet_distance(const FrechetStats& a, const FrechetStats& b);

class FrameEmbedder {
public:
    virtual ~FrameEmbedder() = default;
    virtual int64_t dim() const = 0;
    virtual std::vector<double> embed(const Tensor& frame) const = 0;  // [1,C,H,W]
};

class ClipEmbedder {
public:
    virtual ~ClipEmbedder() = default;
    virtual int64_t dim() const = 0;
    virtual std::vector<double> embed_clip(const Tensor& frames) const = 0;  // [F,C,H,W]
};

// Global mean pixel value; the 1-D reference embedder.
class MeanPixelEmbedder : public FrameEmbedder {
public:
    int64_t dim() const override { return 1; }
    std::vector<double> embed(const Tensor& frame) const override;
};

// Per-channel mean and standard deviation.
class ChannelMomentsEmbedder : public FrameEmbedder {
public:
    explicit ChannelMomentsEmbedder(int64_t channels = 3) : channels_(channels) {}
    int64_t dim() const override { return 2 * channels_; }
    std::vector<double> embed(const Tensor& frame) const override;

private:
    int64_t channels_;
};

// Temporal mean of a frame embedder plus mean absolute frame difference.
class MotionStatsClipEmbedder : public ClipEmbedder {
public:
    explicit MotionStatsClipEmbedder(const FrameEmbedder* frames) : frames_(frames) {}
    int64_t dim() const override { return frames_->dim() + 1; }
    std::vector<double> embed_clip(const Tensor& frames) const override;

private:
    const FrameEmbedder* frames_;
};

// Pair-scored metrics (LPIPS, lip-sync confidence) stay behind adapters; the
// bundled implementation shells out to any executable printing one scalar for
// two media paths.
class PairScoreAdapter {
public:
    virtual ~PairScoreAdapter() = default;
    virtual double score(const std::filesystem::path& generated,
                         const std::filesystem::path& reference) const = 0;
};

class CommandPairScorer : public PairScoreAdapter {
public:
    explicit CommandPairScorer(std::string command) : command_(std::move(command)) {}
    double score(const std::filesystem::path& generated,
                 const std::filesystem::path& reference) const override;

private:
    std::string command_;
};

// External embedding backends: the executable receives one media path (a PNG
// for frames, a clip directory for clips) and prints the embedding as
// whitespace-separated numbers. Tensors are staged to temporary files.
class CommandFrameEmbedder : public FrameEmbedder {
public:
    explicit CommandFrameEmbedder(std::string command) : command_(std::move(command)) {}
    int64_t dim() const override;
    std::vector<double> embed(const Tensor& frame) const override;

private:
    std::string command_;
    mutable int64_t dim_ = -1;
};

class CommandClipEmbedder : public ClipEmbedder {
public:
    explicit CommandClipEmbedder(std::string command) : command_(std::move(command)) {}
    int64_t dim() const override;
    std::vector<double> embed_clip(const Tensor& frames) const override;

private:
    std::string command_;
    mutable int64_t dim_ = -1;
};

struct PairMetrics {
    std::string name;
    double ssim = 0.0;
    double psnr = 0.0;
    std::optional<double> lpips;
    std::optional<double> sync_c;
};

struct MetricReport {
    std::vector<PairMetrics> pairs;
    double mean_ssim = 0.0;
    double mean_psnr = 0.0;
    double fid = 0.0;
    double fvd = 0.0;
    std::optional<double> mean_lpips;
    std::optional<double> mean_sync_c;
    std::string config_echo;
};

struct EvaluateOptions {
    const FrameEmbedder* frame_embedder = nullptr;  // defaults to mean pixel
    const ClipEmbedder* clip_embedder = nullptr;    // defaults to motion stats
    const PairScoreAdapter* lpips = nullptr;
    const PairScoreAdapter* sync = nullptr;
};

// Entries are paired by filename between the two directories; a clip is a
// frame directory or a bare .png. Frame metrics are averaged per pair; the
// distributional metrics pool embeddings across all pairs.
MetricReport evaluate_pairs(const std::filesystem::path& generated_dir,
                            const std::filesystem::path& reference_dir,
                            const EvaluateOptions& options = {});

void save_report_json(const MetricReport& report, const std::filesystem::path& path);
void save_report_csv(const MetricReport& report, const std::filesystem::path& path);

}  // namespace lipsync
