#include "lipsync/training.hpp"

#include <cstring>
#include <fstream>

#include "config_json.hpp"

#include "lipsync/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lipsync {

void TrainConfig::validate() const {
    require(frames_per_clip >= 1, ErrorCode::SchemaError, "frames_per_clip must be positive");
    require(fps > 0, ErrorCode::SchemaError, "fps must be positive");
    require(resolution >= 8, ErrorCode::SchemaError, "resolution too small");
    require(lr > 0, ErrorCode::SchemaError, "lr must be positive");
    require(batch_size >= 1, ErrorCode::SchemaError, "batch_size must be positive");
    require(steps >= 1, ErrorCode::SchemaError, "steps must be positive");
    require(p_audio >= 0 && p_audio <= 1, ErrorCode::SchemaError, "p_audio in [0,1]");
    require(p_ref >= 0 && p_ref <= 1, ErrorCode::SchemaError, "p_ref in [0,1]");
    require(pad_ratio >= 0, ErrorCode::SchemaError, "pad_ratio must be >= 0");
    require(smooth_alpha >= 0 && smooth_alpha <= 1, ErrorCode::SchemaError, "alpha in [0,1]");
    require(max_landmark_gap >= 0, ErrorCode::SchemaError, "max_landmark_gap >= 0");
    require(sigma_data > 0, ErrorCode::SchemaError, "sigma_data must be positive");
    require(grad_clip >= 0, ErrorCode::SchemaError, "grad_clip must be >= 0");
}

namespace {

VideoClip slice_clip(const VideoClip& clip, int64_t start, int64_t len) {
    Tensor out({len, clip.channels(), clip.height(), clip.width()});
    int64_t chw = clip.channels() * clip.height() * clip.width();
    std::copy(clip.frames.data() + start * chw, clip.frames.data() + (start + len) * chw,
              out.data());
    return VideoClip::create(std::move(out), clip.fps);
}

}  // namespace

TrainSample build_sample(const VideoClip& video, const LandmarkSequence& landmarks,
                         const Tensor& audio_features, const TrainConfig& cfg, int64_t audio_k,
                         Rng& rng) {
    cfg.validate();
    int64_t total = video.frame_count();
    require(total >= cfg.frames_per_clip, ErrorCode::ClipTooShort,
            "clip has " + std::to_string(total) + " frames, need " +
                std::to_string(cfg.frames_per_clip));
    require(static_cast<int64_t>(landmarks.size()) == total, ErrorCode::ShapeMismatch,
            "landmark count must match frame count");
    require(audio_features.dims() == 2 && audio_features.dim(0) >= total,
            ErrorCode::ShapeMismatch, "audio features must cover every frame");

    auto raw = landmarks_to_box(landmarks, cfg.pad_ratio, video.width(), video.height());
    auto filled = fill_missing(raw, cfg.max_landmark_gap);
    auto smoothed = smooth_boxes(filled, cfg.smooth_alpha);

    // draw order: window start, then reference index
    int64_t start = static_cast<int64_t>(rng.below(uint64_t(total - cfg.frames_per_clip + 1)));
    auto ref_index = static_cast<int64_t>(rng.below(uint64_t(total)));

    std::vector<BoundingBox> window_boxes(smoothed.begin() + start,
                                          smoothed.begin() + start + cfg.frames_per_clip);
    MaskSequence masks = rasterize(window_boxes, video.height(), video.width());
    double full_area = double(video.height() * video.width());
    for (int64_t f = 0; f < cfg.frames_per_clip; ++f) {
        double area = 0;
        for (int64_t i = 0; i < video.height() * video.width(); ++i) {
            area += masks.binary_masks[f * video.height() * video.width() + i];
        }
        require(area > 0.0 && area < full_area, ErrorCode::DegenerateMask,
                "mask covers " + std::to_string(100.0 * area / full_area) + "% of frame " +
                    std::to_string(start + f));
    }

    TrainSample sample;
    sample.window_start = start;
    sample.ref_index = ref_index;
    sample.target_clip = slice_clip(video, start, cfg.frames_per_clip);
    sample.masked_clip = apply_mask(sample.target_clip, masks, 0.0f);
    sample.masks = std::move(masks);
    sample.ref_image = video.frame(ref_index);
    sample.ref_lip_mask = rasterize({smoothed[static_cast<size_t>(ref_index)]}, video.height(),
                                    video.width())
                              .binary_masks;

    AudioFeatureWindowed full = window_audio(audio_features, audio_k);
    Tensor window({cfg.frames_per_clip, 2 * audio_k + 1, audio_features.dim(1)});
    int64_t row = (2 * audio_k + 1) * audio_features.dim(1);
    std::copy(full.per_frame.data() + start * row,
              full.per_frame.data() + (start + cfg.frames_per_clip) * row, window.data());
    sample.audio_window = AudioFeatureWindowed{std::move(window), audio_k, false};
    return sample;
}

std::vector<ManifestEntry> load_dataset_manifest(const fs::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::IoFailure, "cannot open manifest " + path.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            raise(ErrorCode::SchemaError, "bad manifest line: " + std::string(e.what()));
        }
        ManifestEntry entry;
        entry.frames_dir = j.at("frames_dir").get<std::string>();
        entry.audio_path = j.value("audio_path", std::string());
        entry.landmarks_path = j.at("landmarks_path").get<std::string>();
        entry.filters_passed = j.value("filters_passed", true);
        entries.push_back(std::move(entry));
    }
    return entries;
}

ClipRecord load_clip_record(const ManifestEntry& entry, const SpeechFeatureExtractor& extractor) {
    ClipRecord record;
    record.clip = load_video(entry.frames_dir);
    record.landmarks = load_landmarks(entry.landmarks_path);
    AudioTrack audio = record.clip.audio ? *record.clip.audio : load_wav(entry.audio_path);
    audio = resample_audio(audio, extractor.expected_sample_rate());
    record.audio_features = extractor.extract(audio, record.clip.fps);
    return record;
}

Trainer::Trainer(const UNetConfig& unet_cfg, const TrainConfig& train_cfg,
                 const CodecSpec& codec)
    : unet_cfg_(unet_cfg), train_cfg_(train_cfg), codec_spec_(codec),
      codec_(make_codec(codec)) {
    unet_cfg_.validate();
    train_cfg_.validate();
    require(codec_->latent_channels() == unet_cfg_.latent_channels, ErrorCode::ConfigMismatch,
            "codec latent channels must match the UNet");
    net_ = std::make_unique<UNet>(unet_cfg_, train_cfg_.seed);
    IdGuiderConfig gcfg = IdGuiderConfig::for_unet(unet_cfg_, codec_->scale());
    guider_ = std::make_unique<IdGuider>(gcfg, train_cfg_.seed + 1);
    opt_.lr = train_cfg_.lr;
    opt_.weight_decay = train_cfg_.weight_decay;
    opt_.clip_norm = train_cfg_.grad_clip;
    nn::ParamList<float> params = net_->parameters();
    for (auto& p : guider_->parameters()) {
        params.push_back(p);
    }
    opt_.attach(params);
    rng_ = Rng(train_cfg_.seed);
}

TrainSample Trainer::draw_sample(const std::vector<ClipRecord>& dataset, int64_t* picked_index) {
    auto idx = static_cast<int64_t>(rng_.below(dataset.size()));
    *picked_index = idx;
    const ClipRecord& record = dataset[static_cast<size_t>(idx)];
    return build_sample(record.clip, record.landmarks, record.audio_features, train_cfg_,
                        unet_cfg_.audio_window, rng_);
}

StepResult Trainer::train_step(const std::vector<ClipRecord>& dataset) {
    require(!dataset.empty(), ErrorCode::ConfigMismatch, "empty dataset");
    opt_.zero_grad();
    Var total;
    StepResult result;
    LossWeights weights = LossWeights::edm_default(train_cfg_.sigma_data);
    int levels = unet_cfg_.levels();
    for (int64_t b = 0; b < train_cfg_.batch_size; ++b) {
        int64_t idx = 0;
        TrainSample sample = draw_sample(dataset, &idx);
        result.sample_ids.push_back(idx);

        Tensor z0 = codec_->encode(sample.target_clip.frames);
        Tensor masked_latents = codec_->encode(sample.masked_clip.frames);

        // one dropout draw and one sigma draw per sample
        bool drop_audio = rng_.uniform() < train_cfg_.p_audio;
        bool drop_ref = rng_.uniform() < train_cfg_.p_ref || drop_audio;
        double sigma = sample_training_sigma(rng_, train_cfg_.sigma_mean_log,
                                             train_cfg_.sigma_std_log);
        Tensor z_t = z0;
        for (int64_t i = 0; i < z_t.numel(); ++i) {
            z_t[i] += float(rng_.normal() * sigma);
        }

        ConditionVars cond;
        if (drop_ref) {
            int64_t h = z0.dim(2), w = z0.dim(3);
            for (int l = 0; l < levels; ++l) {
                cond.id_levels.push_back(Var::constant(
                    Tensor::zeros({unet_cfg_.down_channels[size_t(l)], h >> l, w >> l})));
            }
        } else {
            Var guider_in = ag::concat<float>(
                {Var::constant(sample.ref_image), Var::constant(sample.ref_lip_mask)}, 1);
            std::vector<Var> pyramid = guider_->forward(guider_in);
            for (Var& level : pyramid) {
                const Shape& s = level.shape();
                cond.id_levels.push_back(ag::reshape(level, {s[1], s[2], s[3]}));
            }
        }
        cond.audio = Var::constant(drop_audio
                                       ? Tensor::zeros(sample.audio_window.per_frame.shape())
                                       : sample.audio_window.per_frame);
        cond.masked_latents = Var::constant(masked_latents);

        Var loss = dsm_loss_var<float>(z0, Var::constant(z_t), sigma, cond, *net_, weights,
                                       train_cfg_.sigma_data);
        total = total.defined() ? ag::add(total, loss) : loss;
    }
    total = ag::scale(total, float(1.0 / double(train_cfg_.batch_size)));
    result.loss = total.value()[0];
    if (!std::isfinite(result.loss)) {
        std::string ids;
        for (int64_t id : result.sample_ids) {
            ids += (ids.empty() ? "" : ", ") + std::to_string(id);
        }
        raise(ErrorCode::NonFiniteLoss, "aborting step " + std::to_string(step_) +
                                            "; sample ids: " + ids);
    }
    total.backward();
    result.grad_norm = opt_.grad_global_norm();
    opt_.step();
    ++step_;
    return result;
}

namespace {

constexpr char kMagic[4] = {'L', 'S', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void write_raw(std::ostream& out, const void* data, size_t bytes) {
    out.write(reinterpret_cast<const char*>(data), std::streamsize(bytes));
}

struct TensorIndexEntry {
    std::string name;
    Shape shape;
    uint64_t offset = 0;  // in floats
};

}  // namespace

void Trainer::save_checkpoint(const fs::path& path) const {
    auto* self = const_cast<Trainer*>(this);
    nn::ParamList<float> params = self->net_->parameters();
    for (auto& p : self->guider_->parameters()) {
        params.push_back(p);
    }

    json index = json::array();
    uint64_t offset = 0;
    auto add_entry = [&](const std::string& name, const Tensor& t) {
        index.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += uint64_t(t.numel());
    };
    for (auto& p : params) {
        add_entry(p.name, p.var->value());
    }
    for (size_t i = 0; i < params.size(); ++i) {
        add_entry("opt.m." + params[i].name, self->opt_.m[i]);
        add_entry("opt.v." + params[i].name, self->opt_.v[i]);
    }

    json header;
    header["unet_config"] = unet_cfg_;
    header["train_config"] = train_cfg_;
    header["step"] = step_;
    header["rng_state"] = rng_.state();
    header["opt_step_count"] = opt_.step_count;
    header["codec"] = codec_spec_;
    header["tensors"] = std::move(index);
    std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorCode::IoFailure, "cannot write checkpoint " + path.string());
    write_raw(out, kMagic, 4);
    uint32_t version = kVersion;
    write_raw(out, &version, 4);
    uint64_t header_len = header_str.size();
    write_raw(out, &header_len, 8);
    write_raw(out, header_str.data(), header_str.size());
    for (auto& p : params) {
        write_raw(out, p.var->value().data(), size_t(p.var->value().numel()) * sizeof(float));
    }
    for (size_t i = 0; i < params.size(); ++i) {
        write_raw(out, self->opt_.m[i].data(), size_t(self->opt_.m[i].numel()) * sizeof(float));
        write_raw(out, self->opt_.v[i].data(), size_t(self->opt_.v[i].numel()) * sizeof(float));
    }
    require(out.good(), ErrorCode::IoFailure, "write failed for " + path.string());
}

namespace {

json read_checkpoint_header(std::ifstream& in, const fs::path& path) {
    char magic[4];
    in.read(magic, 4);
    require(in.good() && std::memcmp(magic, kMagic, 4) == 0, ErrorCode::UnreadableMedia,
            "not a checkpoint file: " + path.string());
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    require(version == kVersion, ErrorCode::ConfigMismatch,
            "unsupported checkpoint version " + std::to_string(version));
    uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), 8);
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), std::streamsize(header_len));
    require(in.good(), ErrorCode::UnreadableMedia, "truncated checkpoint header");
    return json::parse(header_str);
}

}  // namespace

void Trainer::restore_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::IoFailure, "cannot open checkpoint " + path.string());
    json header = read_checkpoint_header(in, path);

    UNetConfig stored_unet = header.at("unet_config").get<UNetConfig>();
    json stored_unet_json = header.at("unet_config");
    json current_unet_json;
    to_json(current_unet_json, unet_cfg_);
    require(stored_unet_json == current_unet_json, ErrorCode::ConfigMismatch,
            "checkpoint UNet configuration does not match this trainer");
    json stored_codec = header.at("codec");
    json current_codec;
    to_json(current_codec, codec_spec_);
    require(stored_codec == current_codec, ErrorCode::ConfigMismatch,
            "checkpoint codec does not match this trainer");

    nn::ParamList<float> params = net_->parameters();
    for (auto& p : guider_->parameters()) {
        params.push_back(p);
    }
    std::vector<json> entries = header.at("tensors").get<std::vector<json>>();
    size_t cursor = 0;
    auto read_into = [&](const std::string& name, Tensor& dst) {
        require(cursor < entries.size(), ErrorCode::ConfigMismatch, "checkpoint index too short");
        const json& e = entries[cursor++];
        require(e.at("name").get<std::string>() == name, ErrorCode::ConfigMismatch,
                "checkpoint tensor order mismatch at " + name);
        Shape shape = e.at("shape").get<Shape>();
        require(shape == dst.shape(), ErrorCode::ConfigMismatch,
                "checkpoint tensor shape mismatch at " + name);
        in.read(reinterpret_cast<char*>(dst.data()),
                std::streamsize(size_t(dst.numel()) * sizeof(float)));
        require(in.good(), ErrorCode::UnreadableMedia, "truncated checkpoint data at " + name);
    };
    for (auto& p : params) {
        read_into(p.name, p.var->value());
    }
    for (size_t i = 0; i < params.size(); ++i) {
        read_into("opt.m." + params[i].name, opt_.m[i]);
        read_into("opt.v." + params[i].name, opt_.v[i]);
    }
    step_ = header.at("step").get<int64_t>();
    rng_.set_state(header.at("rng_state").get<uint64_t>());
    opt_.step_count = header.at("opt_step_count").get<int64_t>();
    (void)stored_unet;
}

std::unique_ptr<Trainer> Trainer::load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::IoFailure, "cannot open checkpoint " + path.string());
    json header = read_checkpoint_header(in, path);
    in.close();
    auto unet_cfg = header.at("unet_config").get<UNetConfig>();
    auto train_cfg = header.at("train_config").get<TrainConfig>();
    auto codec_spec = header.at("codec").get<CodecSpec>();
    auto trainer = std::make_unique<Trainer>(unet_cfg, train_cfg, codec_spec);
    trainer->restore_checkpoint(path);
    return trainer;
}

}  // namespace lipsync
