#include "doctest.h"

#include <cmath>

#include "gradcheck.hpp"
#include "lipsync/conditions.hpp"
#include "lipsync/diffusion.hpp"
#include "lipsync/unet.hpp"
#include "stub_nets.hpp"

using namespace lipsync;
namespace ts = testsupport;

namespace {

UNetConfig toy_config() {
    UNetConfig cfg;
    cfg.down_channels = {8, 16};
    cfg.num_res_blocks = 1;
    cfg.attn_heads = 2;
    cfg.attn_max_resolution = 64;
    cfg.latent_channels = 3;
    cfg.audio_dim = 16;
    cfg.audio_window = 2;
    cfg.time_embed_dim = 16;
    cfg.norm_groups = 4;
    return cfg;
}

template <typename T>
ConditionVarsT<T> random_cond(const UNetConfig& cfg, int64_t frames, int64_t h, int64_t w,
                              uint64_t seed, bool with_id) {
    Rng rng(seed);
    ConditionVarsT<T> cond;
    if (with_id) {
        for (int l = 0; l < cfg.levels(); ++l) {
            cond.id_levels.push_back(VarT<T>::constant(
                TensorT<T>::randn({cfg.down_channels[size_t(l)], h >> l, w >> l}, rng)));
        }
    }
    cond.audio = VarT<T>::constant(
        TensorT<T>::randn({frames, 2 * cfg.audio_window + 1, cfg.audio_dim}, rng));
    cond.masked_latents =
        VarT<T>::constant(TensorT<T>::randn({frames, cfg.latent_channels, h, w}, rng));
    return cond;
}

}  // namespace

TEST_SUITE("unet") {
    TEST_CASE("forward keeps the latent shape contract") {
        UNetConfig cfg = toy_config();
        UNet net(cfg, 3);
        auto cond = random_cond<float>(cfg, 4, 16, 16, 7, false);
        Rng rng(1);
        Var noisy = Var::constant(Tensor::randn({4, 3, 16, 16}, rng));
        NoGradGuard ng;
        Var out = net.forward(noisy, cond, -0.3f);
        CHECK(out.shape() == Shape{4, 3, 16, 16});
    }

    TEST_CASE("forward-shape contract holds across 50 random valid configs") {
        Rng meta(20250810);
        for (int trial = 0; trial < 50; ++trial) {
            UNetConfig cfg;
            int levels = 1 + int(meta.below(2));
            int64_t base = 4 << meta.below(2);  // 4 or 8
            cfg.down_channels.clear();
            for (int l = 0; l < levels; ++l) {
                cfg.down_channels.push_back(base << l);
            }
            cfg.num_res_blocks = 1 + int(meta.below(2));
            cfg.attn_heads = 2;
            cfg.attn_max_resolution = 4 << meta.below(3);
            cfg.temporal_attention = meta.below(2) == 0;
            cfg.latent_channels = 1 + int64_t(meta.below(4));
            cfg.audio_dim = 8 << meta.below(2);
            cfg.audio_window = int64_t(meta.below(4));
            cfg.time_embed_dim = 8 << meta.below(2);
            cfg.norm_groups = int(std::min<int64_t>(4, base));
            cfg.validate();
            UNet net(cfg, meta.next_u64());
            int64_t frames = 1 + int64_t(meta.below(3));
            int64_t h = 8, w = 8;
            auto cond = random_cond<float>(cfg, frames, h, w, meta.next_u64(), meta.below(2) == 0);
            Rng rng(meta.next_u64());
            Var noisy = Var::constant(Tensor::randn({frames, cfg.latent_channels, h, w}, rng));
            NoGradGuard ng;
            Var out = net.forward(noisy, cond, 0.1f);
            CHECK(out.shape() == Shape{frames, cfg.latent_channels, h, w});
            CHECK(out.value().all_finite());
        }
    }

    TEST_CASE("outputs stay finite over many random toy forwards") {
        UNetConfig cfg;
        cfg.down_channels = {4};
        cfg.attn_heads = 2;
        cfg.latent_channels = 2;
        cfg.audio_dim = 8;
        cfg.audio_window = 1;
        cfg.time_embed_dim = 8;
        cfg.norm_groups = 2;
        UNet net(cfg, 5);
        Rng rng(2);
        NoGradGuard ng;
        for (int i = 0; i < 1000; ++i) {
            ConditionVars cond;
            cond.audio = Var::constant(Tensor::randn({2, 3, 8}, rng));
            cond.masked_latents = Var::constant(Tensor::randn({2, 2, 8, 8}, rng));
            Var noisy = Var::constant(Tensor::randn({2, 2, 8, 8}, rng));
            Var out = net.forward(noisy, cond, float(rng.normal()));
            CHECK(out.value().all_finite());
        }
    }

    TEST_CASE("dropped conditions make forward a deterministic function") {
        UNetConfig cfg = toy_config();
        UNet net(cfg, 9);
        Rng rng(3);
        Var noisy = Var::constant(Tensor::randn({2, 3, 16, 16}, rng));
        ConditionVars cond;
        cond.audio = Var::constant(Tensor::zeros({2, 5, 16}));
        cond.masked_latents = Var::constant(Tensor::randn({2, 3, 16, 16}, rng));
        NoGradGuard ng;
        Var a = net.forward(noisy, cond, 0.5f);
        Var b = net.forward(noisy, cond, 0.5f);
        CHECK(a.value().max_abs_diff(b.value()) == 0.0);
    }

    TEST_CASE("frame permutation equivariance with temporal attention disabled") {
        UNetConfig cfg = toy_config();
        cfg.temporal_attention = false;
        UNet net(cfg, 11);
        int64_t frames = 4;
        Rng rng(4);
        Tensor noisy = Tensor::randn({frames, 3, 16, 16}, rng);
        Tensor masked = Tensor::randn({frames, 3, 16, 16}, rng);
        Tensor audio = Tensor::randn({frames, 5, 16}, rng);
        std::vector<int64_t> perm{2, 0, 3, 1};

        auto permute_frames = [&](const Tensor& t) {
            Tensor out(t.shape());
            int64_t inner = t.numel() / t.dim(0);
            for (int64_t f = 0; f < t.dim(0); ++f) {
                std::copy(t.data() + perm[size_t(f)] * inner, t.data() + (perm[size_t(f)] + 1) * inner,
                          out.data() + f * inner);
            }
            return out;
        };

        ConditionVars cond;
        cond.audio = Var::constant(audio);
        cond.masked_latents = Var::constant(masked);
        NoGradGuard ng;
        Tensor base = net.forward(Var::constant(noisy), cond, 0.2f).value();

        ConditionVars pcond;
        pcond.audio = Var::constant(permute_frames(audio));
        pcond.masked_latents = Var::constant(permute_frames(masked));
        Tensor permuted = net.forward(Var::constant(permute_frames(noisy)), pcond, 0.2f).value();

        // oracle: permuting all frame-indexed inputs permutes the output rows
        Tensor expected = permute_frames(base);
        CHECK(permuted.max_abs_diff(expected) < 1e-5);
    }

    TEST_CASE("attention weights are a proper distribution per query") {
        UNetConfig cfg = toy_config();
        UNet net(cfg, 13);
        std::vector<Tensor> maps;
        net.set_attention_capture(&maps);
        auto cond = random_cond<float>(cfg, 2, 16, 16, 21, true);
        Rng rng(6);
        Var noisy = Var::constant(Tensor::randn({2, 3, 16, 16}, rng));
        NoGradGuard ng;
        (void)net.forward(noisy, cond, 0.0f);
        net.set_attention_capture(nullptr);
        REQUIRE(!maps.empty());
        for (const Tensor& m : maps) {
            int64_t rows = m.dim(0) * m.dim(1);
            int64_t cols = m.dim(2);
            for (int64_t r = 0; r < rows; ++r) {
                double sum = 0.0;
                for (int64_t c = 0; c < cols; ++c) {
                    float v = m[r * cols + c];
                    CHECK(v >= 0.0f);
                    sum += double(v);
                }
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-4));
            }
        }
    }

    TEST_CASE("zero-initialized ID taps make real and ZEROED pyramids indistinguishable") {
        UNetConfig cfg = toy_config();
        UNet net(cfg, 15);
        IdGuiderConfig gcfg = IdGuiderConfig::for_unet(cfg, 1);
        IdGuider guider(gcfg, 15);
        Rng rng(7);
        Tensor ref = Tensor::rand({1, 3, 16, 16}, rng);
        Tensor lip_mask = Tensor::zeros({1, 1, 16, 16});
        IdFeaturePyramid pyr = encode_identity(ref, lip_mask, guider);

        ConditionVars with_real;
        for (const Tensor& level : pyr.levels) {
            with_real.id_levels.push_back(Var::constant(level));
        }
        with_real.audio = Var::constant(Tensor::randn({2, 5, 16}, rng));
        with_real.masked_latents = Var::constant(Tensor::randn({2, 3, 16, 16}, rng));

        ConditionVars with_zero = with_real;
        with_zero.id_levels.clear();
        for (const Tensor& level : pyr.levels) {
            with_zero.id_levels.push_back(Var::constant(Tensor::zeros(level.shape())));
        }

        Var noisy = Var::constant(Tensor::randn({2, 3, 16, 16}, rng));
        NoGradGuard ng;
        Tensor a = net.forward(noisy, with_real, 0.3f).value();
        Tensor b = net.forward(noisy, with_zero, 0.3f).value();
        CHECK(a.max_abs_diff(b) == 0.0);
    }

    TEST_CASE("CONFIG_MISMATCH when the ID pyramid disagrees with the UNet") {
        UNetConfig cfg = toy_config();
        UNet net(cfg, 17);
        Rng rng(8);
        ConditionVars cond = random_cond<float>(cfg, 2, 16, 16, 31, true);
        cond.id_levels[1] = Var::constant(Tensor::zeros({8, 8, 8}));  // wrong channels
        Var noisy = Var::constant(Tensor::randn({2, 3, 16, 16}, rng));
        NoGradGuard ng;
        try {
            net.forward(noisy, cond, 0.0f);
            FAIL("expected CONFIG_MISMATCH");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::ConfigMismatch);
        }
    }

    TEST_CASE("gradients reach every parameter group in one step") {
        UNetConfig cfg = toy_config();
        UNet net(cfg, 19);
        IdGuiderConfig gcfg = IdGuiderConfig::for_unet(cfg, 1);
        IdGuider guider(gcfg, 19);
        Rng rng(9);
        Tensor ref = Tensor::rand({1, 3, 16, 16}, rng);
        Tensor lip_mask = Tensor::rand({1, 1, 16, 16}, rng);
        Tensor z0 = Tensor::randn({2, 3, 16, 16}, rng, 0.5f);
        Tensor z_t = z0;
        for (int64_t i = 0; i < z_t.numel(); ++i) {
            z_t[i] += 0.8f * float(rng.normal());
        }

        for (auto& p : net.parameters()) {
            p.var->clear_grad();
        }
        for (auto& p : guider.parameters()) {
            p.var->clear_grad();
        }

        Var guider_in = ag::concat<float>({Var::constant(ref), Var::constant(lip_mask)}, 1);
        std::vector<Var> levels = guider.forward(guider_in);
        ConditionVars cond;
        for (Var& level : levels) {
            const Shape& s = level.shape();
            cond.id_levels.push_back(ag::reshape(level, {s[1], s[2], s[3]}));
        }
        cond.audio = Var::constant(Tensor::randn({2, 5, 16}, rng));
        cond.masked_latents = Var::constant(Tensor::randn({2, 3, 16, 16}, rng));

        Var z_t_var = Var::constant(z_t);
        Var loss = dsm_loss_var<float>(z0, z_t_var, 0.8, cond, net, LossWeights::edm_default());
        loss.backward();

        auto group_grad_norm = [&](nn::ParamList<float>& params, const std::string& needle) {
            double acc = 0.0;
            for (auto& p : params) {
                if (p.name.find(needle) == std::string::npos) {
                    continue;
                }
                Tensor g = p.var->grad_or_zeros();
                for (int64_t i = 0; i < g.numel(); ++i) {
                    acc += double(g[i]) * double(g[i]);
                }
            }
            return std::sqrt(acc);
        };
        auto net_params = net.parameters();
        auto guider_params = guider.parameters();
        CHECK(group_grad_norm(net_params, "audio_attn") > 0.0);
        CHECK(group_grad_norm(net_params, "temporal") > 0.0);
        CHECK(group_grad_norm(net_params, "self_attn") > 0.0);
        CHECK(group_grad_norm(net_params, "res") > 0.0);
        CHECK(group_grad_norm(guider_params, "tap") > 0.0);  // the ID adapters
    }

    TEST_CASE("whole-network gradients match finite differences in double") {
        // tiny double-precision instantiation; every layer participates
        UNetConfig cfg;
        cfg.down_channels = {4};
        cfg.attn_heads = 2;
        cfg.attn_max_resolution = 8;
        cfg.latent_channels = 2;
        cfg.audio_dim = 4;
        cfg.audio_window = 1;
        cfg.time_embed_dim = 8;
        cfg.norm_groups = 2;
        UNetT<double> net(cfg, 23);
        Rng rng(10);
        TensorD z0 = TensorD::randn({2, 2, 4, 4}, rng, 0.5);
        TensorD z_t = z0;
        for (int64_t i = 0; i < z_t.numel(); ++i) {
            z_t[i] += 0.6 * rng.normal();
        }
        ConditionVarsT<double> cond;
        cond.id_levels.push_back(VarD::param(TensorD::randn({4, 4, 4}, rng, 0.3)));
        cond.audio = VarD::constant(TensorD::randn({2, 3, 4}, rng));
        cond.masked_latents = VarD::constant(TensorD::randn({2, 2, 4, 4}, rng));

        auto loss_fn = [&] {
            VarD z_t_var = VarD::constant(z_t);
            return dsm_loss_var<double>(z0, z_t_var, 0.7, cond, net, LossWeights::edm_default());
        };
        // spot-check a representative subset of parameters
        auto params = net.parameters();
        std::vector<VarD*> subset;
        for (auto& p : params) {
            if (p.name.find("audio_attn.k.weight") != std::string::npos ||
                p.name.find("temporal.q.weight") != std::string::npos ||
                p.name.find("res.conv1.bias") != std::string::npos ||
                p.name.find("res.norm1.gamma") != std::string::npos ||
                p.name.find("time_proj.weight") != std::string::npos ||
                p.name == "stem.weight" || p.name == "out_conv.weight") {
                subset.push_back(p.var);
            }
        }
        subset.push_back(&cond.id_levels[0]);
        REQUIRE(subset.size() >= 5);
        double err = ts::max_relative_grad_error<double>(subset, loss_fn, 1e-5);
        CHECK(err < 1e-4);  // pinned contract
        CHECK(err < 1e-6);  // double-precision headroom
    }

    TEST_CASE("parameter counting closed forms") {
        ts::ZeroNetT<float> zero_net;
        CHECK(count_parameters<float>(zero_net) == 0);  // zero-layer net

        Rng rng(11);
        nn::Conv2d conv(4, 8, 3, 1, 1, rng);
        nn::ParamList<float> plist;
        conv.visit("c", plist);
        CHECK(nn::parameter_count(plist) == 296);  // 4*8*9 + 8

        UNetConfig cfg = toy_config();
        UNet net(cfg, 25);
        CHECK(net.parameter_count() > 0);
        CHECK(net.parameter_count() == nn::parameter_count(net.parameters()));
    }

    TEST_CASE("full-scale config validates without instantiation") {
        UNetConfig cfg = full_scale_unet_config();
        CHECK_NOTHROW(cfg.validate());
        CHECK(cfg.down_channels.size() == 4);
    }
}
