#include "lipsync/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"

#include "lipsync/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lipsync {

double psnr(const Tensor& a, const Tensor& b, double peak) {
    check_same_shape(a, b, "psnr");
    require(peak > 0, ErrorCode::ConfigMismatch, "peak must be positive");
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = double(a[i]) - double(b[i]);
        mse += d * d;
    }
    mse /= double(a.numel());
    if (mse == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Tensor& a, const Tensor& b, int64_t window, double k1, double k2, double peak) {
    check_same_shape(a, b, "ssim");
    require(a.dims() == 4, ErrorCode::ShapeMismatch, "ssim expects [F,C,H,W]");
    require(a.dim(2) >= window && a.dim(3) >= window, ErrorCode::ShapeMismatch,
            "frames smaller than the ssim window");
    double c1 = (k1 * peak) * (k1 * peak);
    double c2 = (k2 * peak) * (k2 * peak);
    int64_t f_count = a.dim(0), c_count = a.dim(1), h = a.dim(2), w = a.dim(3);
    double total = 0.0;
    int64_t windows = 0;
    double inv_n = 1.0 / double(window * window);
    for (int64_t fc = 0; fc < f_count * c_count; ++fc) {
        const float* pa = a.data() + fc * h * w;
        const float* pb = b.data() + fc * h * w;
        for (int64_t y = 0; y + window <= h; ++y) {
            for (int64_t x = 0; x + window <= w; ++x) {
                double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
                for (int64_t dy = 0; dy < window; ++dy) {
                    for (int64_t dx = 0; dx < window; ++dx) {
                        double va = pa[(y + dy) * w + (x + dx)];
                        double vb = pb[(y + dy) * w + (x + dx)];
                        sx += va;
                        sy += vb;
                        sxx += va * va;
                        syy += vb * vb;
                        sxy += va * vb;
                    }
                }
                double mx = sx * inv_n, my = sy * inv_n;
                double vx = sxx * inv_n - mx * mx;
                double vy = syy * inv_n - my * my;
                double cxy = sxy * inv_n - mx * my;
                double num = (2.0 * mx * my + c1) * (2.0 * cxy + c2);
                double den = (mx * mx + my * my + c1) * (vx + vy + c2);
                total += num / den;
                ++windows;
            }
        }
    }
    return windows > 0 ? total / double(windows) : 1.0;
}

FrechetStats compute_stats(const std::vector<std::vector<double>>& samples) {
    require(!samples.empty(), ErrorCode::ShapeMismatch, "no samples to fit");
    int64_t dim = static_cast<int64_t>(samples[0].size());
    FrechetStats stats;
    stats.dim = dim;
    stats.count = static_cast<int64_t>(samples.size());
    stats.mean.assign(size_t(dim), 0.0);
    stats.cov.assign(size_t(dim * dim), 0.0);
    for (const auto& s : samples) {
        require(static_cast<int64_t>(s.size()) == dim, ErrorCode::ShapeMismatch,
                "inconsistent embedding dimension");
        for (int64_t i = 0; i < dim; ++i) {
            stats.mean[size_t(i)] += s[size_t(i)];
        }
    }
    for (double& m : stats.mean) {
        m /= double(stats.count);
    }
    if (stats.count > 1) {
        for (const auto& s : samples) {
            for (int64_t i = 0; i < dim; ++i) {
                double di = s[size_t(i)] - stats.mean[size_t(i)];
                for (int64_t j = 0; j < dim; ++j) {
                    stats.cov[size_t(i * dim + j)] +=
                        di * (s[size_t(j)] - stats.mean[size_t(j)]);
                }
            }
        }
        for (double& v : stats.cov) {
            v /= double(stats.count - 1);
        }
    }
    return stats;
}

namespace {

Eigen::MatrixXd to_matrix(const FrechetStats& s) {
    Eigen::MatrixXd m(s.dim, s.dim);
    for (int64_t i = 0; i < s.dim; ++i) {
        for (int64_t j = 0; j < s.dim; ++j) {
            m(i, j) = s.cov[size_t(i * s.dim + j)];
        }
    }
    return m;
}

void check_psd(const Eigen::MatrixXd& m, const char* which) {
    double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
    require(asym <= 1e-8, ErrorCode::NonPsdCovariance,
            std::string(which) + " covariance is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
    double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
    require(eig.eigenvalues().minCoeff() >= -1e-8 * scale, ErrorCode::NonPsdCovariance,
            std::string(which) + " covariance has a negative eigenvalue");
}

// Symmetric PSD square root; eigenvalues clamped at zero (tolerance 1e-10).
Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
    Eigen::VectorXd vals = eig.eigenvalues();
    for (int i = 0; i < vals.size(); ++i) {
        vals(i) = vals(i) > 1e-10 ? std::sqrt(vals(i)) : 0.0;
    }
    return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const FrechetStats& a, const FrechetStats& b) {
    require(a.dim == b.dim && a.dim > 0, ErrorCode::ShapeMismatch,
            "stats dimensions must agree");
    Eigen::MatrixXd sa = to_matrix(a);
    Eigen::MatrixXd sb = to_matrix(b);
    check_psd(sa, "first");
    check_psd(sb, "second");
    double mean_term = 0.0;
    for (int64_t i = 0; i < a.dim; ++i) {
        double d = a.mean[size_t(i)] - b.mean[size_t(i)];
        mean_term += d * d;
    }
    // tr((Sa Sb)^{1/2}) computed from the symmetric similar form
    Eigen::MatrixXd root_a = sqrtm_psd(sa);
    Eigen::MatrixXd inner = root_a * sb * root_a;
    inner = 0.5 * (inner + inner.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(inner);
    double tr_cross = 0.0;
    for (int i = 0; i < eig.eigenvalues().size(); ++i) {
        double v = eig.eigenvalues()(i);
        tr_cross += v > 1e-10 ? std::sqrt(v) : 0.0;
    }
    double value = mean_term + sa.trace() + sb.trace() - 2.0 * tr_cross;
    return std::max(0.0, value);
}

std::vector<double> MeanPixelEmbedder::embed(const Tensor& frame) const {
    return {frame.mean()};
}

std::vector<double> ChannelMomentsEmbedder::embed(const Tensor& frame) const {
    require(frame.dims() == 4 && frame.dim(1) == channels_, ErrorCode::ShapeMismatch,
            "unexpected channel count");
    std::vector<double> out;
    int64_t hw = frame.dim(2) * frame.dim(3);
    for (int64_t c = 0; c < channels_; ++c) {
        double sum = 0, sum2 = 0;
        const float* p = frame.data() + c * hw;
        for (int64_t i = 0; i < hw; ++i) {
            sum += p[i];
            sum2 += double(p[i]) * double(p[i]);
        }
        double mean = sum / double(hw);
        out.push_back(mean);
        out.push_back(std::sqrt(std::max(0.0, sum2 / double(hw) - mean * mean)));
    }
    return out;
}

std::vector<double> MotionStatsClipEmbedder::embed_clip(const Tensor& frames) const {
    int64_t f_count = frames.dim(0);
    int64_t chw = frames.numel() / f_count;
    std::vector<double> acc(size_t(frames_->dim()), 0.0);
    for (int64_t f = 0; f < f_count; ++f) {
        Tensor frame({1, frames.dim(1), frames.dim(2), frames.dim(3)});
        std::copy(frames.data() + f * chw, frames.data() + (f + 1) * chw, frame.data());
        std::vector<double> e = frames_->embed(frame);
        for (size_t i = 0; i < acc.size(); ++i) {
            acc[i] += e[i];
        }
    }
    for (double& v : acc) {
        v /= double(f_count);
    }
    double motion = 0.0;
    if (f_count > 1) {
        for (int64_t f = 1; f < f_count; ++f) {
            for (int64_t i = 0; i < chw; ++i) {
                motion += std::abs(double(frames[f * chw + i]) - double(frames[(f - 1) * chw + i]));
            }
        }
        motion /= double((f_count - 1) * chw);
    }
    acc.push_back(motion);
    return acc;
}

namespace {

std::vector<double> run_embedding_command(const std::string& command, const fs::path& arg) {
    std::string cmd = command + " \"" + arg.string() + "\"";
    FILE* pipe = popen(cmd.c_str(), "r");
    require(pipe != nullptr, ErrorCode::IoFailure, "cannot run embedder: " + command);
    std::string out;
    char buf[512];
    while (fgets(buf, sizeof(buf), pipe)) {
        out += buf;
    }
    int status = pclose(pipe);
    require(status == 0, ErrorCode::IoFailure,
            "embedder exited with status " + std::to_string(status));
    std::vector<double> values;
    std::istringstream stream(out);
    double v;
    while (stream >> v) {
        values.push_back(v);
    }
    require(!values.empty(), ErrorCode::SchemaError, "embedder printed no numbers");
    return values;
}

fs::path temp_media_path(const std::string& stem) {
    static uint64_t counter = 0;
    return fs::temp_directory_path() / (stem + "_" + std::to_string(counter++));
}

}  // namespace

int64_t CommandFrameEmbedder::dim() const {
    require(dim_ > 0, ErrorCode::ConfigMismatch,
            "embedder dimension unknown before the first call");
    return dim_;
}

std::vector<double> CommandFrameEmbedder::embed(const Tensor& frame) const {
    fs::path path = temp_media_path("lipsync_embed_frame");
    path += ".png";
    save_image(frame, path);
    std::vector<double> out = run_embedding_command(command_, path);
    fs::remove(path);
    if (dim_ < 0) {
        dim_ = static_cast<int64_t>(out.size());
    }
    require(static_cast<int64_t>(out.size()) == dim_, ErrorCode::ShapeMismatch,
            "embedder changed its output dimension");
    return out;
}

int64_t CommandClipEmbedder::dim() const {
    require(dim_ > 0, ErrorCode::ConfigMismatch,
            "embedder dimension unknown before the first call");
    return dim_;
}

std::vector<double> CommandClipEmbedder::embed_clip(const Tensor& frames) const {
    fs::path dir = temp_media_path("lipsync_embed_clip");
    save_video(VideoClip::create(frames, 25.0), dir);
    std::vector<double> out = run_embedding_command(command_, dir);
    fs::remove_all(dir);
    if (dim_ < 0) {
        dim_ = static_cast<int64_t>(out.size());
    }
    require(static_cast<int64_t>(out.size()) == dim_, ErrorCode::ShapeMismatch,
            "embedder changed its output dimension");
    return out;
}

double CommandPairScorer::score(const fs::path& generated, const fs::path& reference) const {
    std::string cmd = command_ + " \"" + generated.string() + "\" \"" + reference.string() + "\"";
    FILE* pipe = popen(cmd.c_str(), "r");
    require(pipe != nullptr, ErrorCode::IoFailure, "cannot run adapter: " + command_);
    char buf[256];
    std::string out;
    while (fgets(buf, sizeof(buf), pipe)) {
        out += buf;
    }
    int status = pclose(pipe);
    require(status == 0, ErrorCode::IoFailure,
            "adapter exited with status " + std::to_string(status) + ": " + command_);
    try {
        return std::stod(out);
    } catch (const std::exception&) {
        raise(ErrorCode::SchemaError, "adapter did not print a scalar: '" + out + "'");
    }
}

namespace {

std::map<std::string, fs::path> list_entries(const fs::path& dir) {
    require(fs::is_directory(dir), ErrorCode::IoFailure, "not a directory: " + dir.string());
    std::map<std::string, fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_directory()) {
            out[entry.path().filename().string()] = entry.path();
        } else if (entry.path().extension() == ".png") {
            out[entry.path().stem().string()] = entry.path();
        }
    }
    return out;
}

Tensor load_entry_frames(const fs::path& path) {
    if (fs::is_directory(path)) {
        return load_video(path).frames;
    }
    return load_image(path);  // a bare PNG is a one-frame clip
}

}  // namespace

MetricReport evaluate_pairs(const fs::path& generated_dir, const fs::path& reference_dir,
                            const EvaluateOptions& options) {
    MeanPixelEmbedder default_frames;
    const FrameEmbedder* frame_embedder =
        options.frame_embedder ? options.frame_embedder : &default_frames;
    MotionStatsClipEmbedder default_clips(frame_embedder);
    const ClipEmbedder* clip_embedder =
        options.clip_embedder ? options.clip_embedder : &default_clips;

    auto gen_entries = list_entries(generated_dir);
    auto ref_entries = list_entries(reference_dir);
    for (const auto& [name, path] : gen_entries) {
        require(ref_entries.count(name) > 0, ErrorCode::MissingPair,
                "reference entry missing for '" + name + "'");
    }
    for (const auto& [name, path] : ref_entries) {
        require(gen_entries.count(name) > 0, ErrorCode::MissingPair,
                "generated entry missing for '" + name + "'");
    }
    require(!gen_entries.empty(), ErrorCode::MissingPair, "no entries to evaluate");

    MetricReport report;
    std::vector<std::vector<double>> gen_frame_embeddings, ref_frame_embeddings;
    std::vector<std::vector<double>> gen_clip_embeddings, ref_clip_embeddings;
    double ssim_sum = 0.0, psnr_sum = 0.0;
    double lpips_sum = 0.0, sync_sum = 0.0;

    for (const auto& [name, gen_path] : gen_entries) {
        const fs::path& ref_path = ref_entries.at(name);
        Tensor gen = load_entry_frames(gen_path);
        Tensor ref = load_entry_frames(ref_path);
        require(gen.shape() == ref.shape(), ErrorCode::ShapeMismatch,
                "pair '" + name + "' has mismatched shapes");

        PairMetrics pm;
        pm.name = name;
        pm.ssim = ssim(gen, ref);
        pm.psnr = psnr(gen, ref);
        if (options.lpips) {
            pm.lpips = options.lpips->score(gen_path, ref_path);
            lpips_sum += *pm.lpips;
        }
        if (options.sync) {
            pm.sync_c = options.sync->score(gen_path, ref_path);
            sync_sum += *pm.sync_c;
        }
        ssim_sum += pm.ssim;
        psnr_sum += pm.psnr;
        report.pairs.push_back(std::move(pm));

        int64_t chw = gen.numel() / gen.dim(0);
        for (int64_t f = 0; f < gen.dim(0); ++f) {
            Tensor gf({1, gen.dim(1), gen.dim(2), gen.dim(3)});
            std::copy(gen.data() + f * chw, gen.data() + (f + 1) * chw, gf.data());
            gen_frame_embeddings.push_back(frame_embedder->embed(gf));
            Tensor rf({1, ref.dim(1), ref.dim(2), ref.dim(3)});
            std::copy(ref.data() + f * chw, ref.data() + (f + 1) * chw, rf.data());
            ref_frame_embeddings.push_back(frame_embedder->embed(rf));
        }
        gen_clip_embeddings.push_back(clip_embedder->embed_clip(gen));
        ref_clip_embeddings.push_back(clip_embedder->embed_clip(ref));
    }

    auto n = double(report.pairs.size());
    report.mean_ssim = ssim_sum / n;
    report.mean_psnr = psnr_sum / n;
    if (options.lpips) {
        report.mean_lpips = lpips_sum / n;
    }
    if (options.sync) {
        report.mean_sync_c = sync_sum / n;
    }
    report.fid = frechet_distance(compute_stats(gen_frame_embeddings),
                                  compute_stats(ref_frame_embeddings));
    report.fvd = frechet_distance(compute_stats(gen_clip_embeddings),
                                  compute_stats(ref_clip_embeddings));
    return report;
}

namespace {

json number_or_inf(double v) {
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    return v;
}

}  // namespace

void save_report_json(const MetricReport& report, const fs::path& path) {
    json pairs = json::array();
    for (const auto& p : report.pairs) {
        json e{{"name", p.name}, {"ssim", p.ssim}, {"psnr", number_or_inf(p.psnr)}};
        if (p.lpips) {
            e["lpips"] = *p.lpips;
        }
        if (p.sync_c) {
            e["sync_c"] = *p.sync_c;
        }
        pairs.push_back(std::move(e));
    }
    json doc{{"pairs", pairs},
             {"aggregate",
              {{"ssim", report.mean_ssim},
               {"psnr", number_or_inf(report.mean_psnr)},
               {"fid", report.fid},
               {"fvd", report.fvd}}}};
    if (report.mean_lpips) {
        doc["aggregate"]["lpips"] = *report.mean_lpips;
    }
    if (report.mean_sync_c) {
        doc["aggregate"]["sync_c"] = *report.mean_sync_c;
    }
    if (!report.config_echo.empty()) {
        doc["config"] = json::parse(report.config_echo);
    }
    std::ofstream out(path);
    require(out.good(), ErrorCode::IoFailure, "cannot write report " + path.string());
    out << doc.dump(2) << "\n";
}

void save_report_csv(const MetricReport& report, const fs::path& path) {
    std::ofstream out(path);
    require(out.good(), ErrorCode::IoFailure, "cannot write report " + path.string());
    out << "name,ssim,psnr,lpips,sync_c\n";
    auto cell = [](const std::optional<double>& v) {
        return v ? std::to_string(*v) : std::string();
    };
    for (const auto& p : report.pairs) {
        out << p.name << "," << p.ssim << "," << p.psnr << "," << cell(p.lpips) << ","
            << cell(p.sync_c) << "\n";
    }
    out << "__aggregate__," << report.mean_ssim << "," << report.mean_psnr << ","
        << cell(report.mean_lpips) << "," << cell(report.mean_sync_c) << "\n";
    out << "__fid__," << report.fid << ",,,\n";
    out << "__fvd__," << report.fvd << ",,,\n";
}

}  // namespace lipsync
