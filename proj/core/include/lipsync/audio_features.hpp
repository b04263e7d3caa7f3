#pragma once

#include <memory>

#include "lipsync/media.hpp"

namespace lipsync {

// Adapter contract for speech representation backends: (samples, rate) at the
// declared sample rate map to one embedding row per video frame.
class SpeechFeatureExtractor {
public:
    virtual ~SpeechFeatureExtractor() = default;
    virtual double expected_sample_rate() const = 0;
    virtual int64_t feature_dim() const = 0;
    // Returns [T, D] with T = round(duration * fps).
    virtual Tensor extract(const AudioTrack& track, double fps) const = 0;
};

// Bundled deterministic backend: frame-synchronous log-mel energies projected
// to the feature dimension by a fixed seeded matrix. Dependency-free stand-in
// for a pretrained speech encoder.
class MelStubExtractor : public SpeechFeatureExtractor {
public:
    explicit MelStubExtractor(double sample_rate = 16000.0, int64_t feature_dim = 64,
                              int64_t mel_bins = 40, int64_t fft_size = 512,
                              uint64_t seed = 0x41c0);

    double expected_sample_rate() const override { return sample_rate_; }
    int64_t feature_dim() const override { return dim_; }
    Tensor extract(const AudioTrack& track, double fps) const override;

private:
    double sample_rate_;
    int64_t dim_;
    int64_t mel_bins_;
    int64_t fft_size_;
    Tensor projection_;  // [mel_bins, dim]
    std::vector<float> window_;
    std::vector<std::pair<int64_t, std::vector<float>>> mel_filters_;  // (start bin, weights)
};

// Checks the adapter's declared rate and delegates; T_a = round(duration*fps).
Tensor extract_audio_features(const AudioTrack& track, double fps,
                              const SpeechFeatureExtractor& extractor);

}  // namespace lipsync
