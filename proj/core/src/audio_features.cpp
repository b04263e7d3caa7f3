#include "lipsync/audio_features.hpp"

#include <cmath>
#include <complex>
#include <vector>

#include "lipsync/errors.hpp"
#include "lipsync/rng.hpp"

namespace lipsync {

namespace {

// Iterative radix-2 FFT; fft_size is a power of two.
void fft_inplace(std::vector<std::complex<double>>& a) {
    size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) {
            j ^= bit;
        }
        j ^= bit;
        if (i < j) {
            std::swap(a[i], a[j]);
        }
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = -2.0 * M_PI / double(len);
        std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0);
            for (size_t k = 0; k < len / 2; ++k) {
                auto u = a[i + k];
                auto v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

MelStubExtractor::MelStubExtractor(double sample_rate, int64_t feature_dim, int64_t mel_bins,
                                   int64_t fft_size, uint64_t seed)
    : sample_rate_(sample_rate), dim_(feature_dim), mel_bins_(mel_bins), fft_size_(fft_size) {
    require(sample_rate > 0, ErrorCode::InvalidRate, "extractor sample rate must be positive");
    require((fft_size & (fft_size - 1)) == 0, ErrorCode::ConfigMismatch,
            "fft size must be a power of two");
    Rng rng(seed);
    projection_ = Tensor({mel_bins_, dim_});
    float scale = 1.0f / std::sqrt(float(mel_bins_));
    for (int64_t i = 0; i < projection_.numel(); ++i) {
        projection_[i] = float(rng.normal()) * scale;
    }
    window_.resize(static_cast<size_t>(fft_size_));
    for (int64_t i = 0; i < fft_size_; ++i) {
        window_[static_cast<size_t>(i)] =
            float(0.5 - 0.5 * std::cos(2.0 * M_PI * double(i) / double(fft_size_ - 1)));
    }
    // triangular mel filters over the power spectrum bins [0, fft/2]
    int64_t spec_bins = fft_size_ / 2 + 1;
    double mel_max = hz_to_mel(sample_rate_ / 2.0);
    std::vector<double> mel_points(static_cast<size_t>(mel_bins_) + 2);
    for (size_t i = 0; i < mel_points.size(); ++i) {
        mel_points[i] = mel_to_hz(mel_max * double(i) / double(mel_bins_ + 1));
    }
    double bin_hz = sample_rate_ / double(fft_size_);
    for (int64_t m = 0; m < mel_bins_; ++m) {
        double lo = mel_points[static_cast<size_t>(m)];
        double mid = mel_points[static_cast<size_t>(m) + 1];
        double hi = mel_points[static_cast<size_t>(m) + 2];
        int64_t start = std::max<int64_t>(0, int64_t(std::ceil(lo / bin_hz)));
        std::vector<float> weights;
        for (int64_t b = start; b < spec_bins; ++b) {
            double f = double(b) * bin_hz;
            if (f > hi) {
                break;
            }
            double w = f <= mid ? (mid > lo ? (f - lo) / (mid - lo) : 0.0)
                                : (hi > mid ? (hi - f) / (hi - mid) : 0.0);
            weights.push_back(float(std::max(0.0, w)));
        }
        mel_filters_.emplace_back(start, std::move(weights));
    }
}

Tensor MelStubExtractor::extract(const AudioTrack& track, double fps) const {
    require(track.sample_rate == sample_rate_, ErrorCode::RateMismatch,
            "extractor expects " + std::to_string(sample_rate_) + " Hz, got " +
                std::to_string(track.sample_rate));
    require(fps > 0, ErrorCode::InvalidRate, "fps must be positive");
    auto t_steps = static_cast<int64_t>(std::llround(track.duration() * fps));
    Tensor out({std::max<int64_t>(t_steps, 0), dim_});
    std::vector<std::complex<double>> buf(static_cast<size_t>(fft_size_));
    std::vector<double> mel(static_cast<size_t>(mel_bins_));
    int64_t n = static_cast<int64_t>(track.samples.size());
    for (int64_t t = 0; t < t_steps; ++t) {
        auto center = static_cast<int64_t>(std::llround((double(t) + 0.5) / fps * sample_rate_));
        int64_t begin = center - fft_size_ / 2;
        for (int64_t i = 0; i < fft_size_; ++i) {
            int64_t src = begin + i;
            double v = (src >= 0 && src < n) ? double(track.samples[static_cast<size_t>(src)]) : 0.0;
            buf[static_cast<size_t>(i)] = v * double(window_[static_cast<size_t>(i)]);
        }
        fft_inplace(buf);
        for (int64_t m = 0; m < mel_bins_; ++m) {
            const auto& [start, weights] = mel_filters_[static_cast<size_t>(m)];
            double acc = 0.0;
            for (size_t j = 0; j < weights.size(); ++j) {
                double re = buf[static_cast<size_t>(start) + j].real();
                double im = buf[static_cast<size_t>(start) + j].imag();
                acc += double(weights[j]) * (re * re + im * im);
            }
            mel[static_cast<size_t>(m)] = std::log(1e-6 + acc);
        }
        for (int64_t d = 0; d < dim_; ++d) {
            double acc = 0.0;
            for (int64_t m = 0; m < mel_bins_; ++m) {
                acc += mel[static_cast<size_t>(m)] * double(projection_.at2(m, d));
            }
            out.at2(t, d) = float(acc);
        }
    }
    return out;
}

Tensor extract_audio_features(const AudioTrack& track, double fps,
                              const SpeechFeatureExtractor& extractor) {
    return extractor.extract(track, fps);
}

}  // namespace lipsync
