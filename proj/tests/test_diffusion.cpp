#include "doctest.h"

#include <cmath>

#include "gradcheck.hpp"
#include "lipsync/diffusion.hpp"
#include "lipsync/errors.hpp"
#include "stub_nets.hpp"

using namespace lipsync;
namespace ts = testsupport;

namespace {

// Net returning a fixed constant; used for affinity checks.
struct ConstNet : DenoisingNetwork {
    float value;
    explicit ConstNet(float v) : value(v) {}
    Var forward(const Var& scaled_noisy, const ConditionVars&, float) override {
        return Var::constant(Tensor::full(scaled_noisy.shape(), value));
    }
};

ConditionVars trivial_cond(const Shape& latent_shape) {
    ConditionVars cond;
    cond.audio = Var::constant(Tensor::zeros({latent_shape[0], 5, 8}));
    cond.masked_latents = Var::constant(Tensor::zeros(latent_shape));
    return cond;
}

LatentVolume random_latents(Shape shape, uint64_t seed, float stddev = 1.0f) {
    Rng rng(seed);
    return LatentVolume{Tensor::randn(std::move(shape), rng, stddev), 1};
}

}  // namespace

TEST_SUITE("diffusion.precondition") {
    TEST_CASE("closed-form value at sigma == sigma_data") {
        // independent oracle: c_skip = sd^2 / (sd^2 + sd^2) = 1/2 exactly
        auto c = precondition(0.5, 0.5);
        CHECK(c.c_skip == 0.5);
        CHECK(c.c_out == doctest::Approx(0.5 * 0.5 / std::sqrt(0.5)).epsilon(1e-15));
    }

    TEST_CASE("identity c_in(s)^2 * (s^2 + sd^2) == 1 at random sigmas") {
        Rng rng(1);
        for (int i = 0; i < 100; ++i) {
            double sigma = std::exp(rng.uniform() * 12.0 - 6.0);
            auto c = precondition(sigma, 0.5);
            CHECK(std::abs(c.c_in * c.c_in * (sigma * sigma + 0.25) - 1.0) < 1e-12);
        }
    }

    TEST_CASE("zero-noise limits") {
        auto c = precondition(1e-12, 0.5);
        CHECK(std::abs(c.c_skip - 1.0) < 1e-10);
        CHECK(std::abs(c.c_out) < 1e-10);
    }

    TEST_CASE("c_noise is ln(sigma)/4") {
        auto c = precondition(std::exp(2.0), 0.5);
        CHECK(c.c_noise == doctest::Approx(0.5).epsilon(1e-12));
    }

    TEST_CASE("INVALID_SIGMA on nonpositive sigma") {
        try {
            precondition(0.0);
            FAIL("expected INVALID_SIGMA");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::InvalidSigma);
        }
        CHECK_THROWS_AS(precondition(-1.0), Error);
        CHECK_THROWS_AS(precondition(1.0, 0.0), Error);
    }
}

TEST_SUITE("diffusion.noise") {
    TEST_CASE("sigma zero leaves latents untouched") {
        LatentVolume z0 = random_latents({2, 3, 4, 4}, 11);
        Rng rng(5);
        auto [z_t, n] = add_noise(z0, 0.0, rng);
        CHECK(z_t.data.max_abs_diff(z0.data) == 0.0);
        CHECK(n.data.sum() == 0.0);
    }

    TEST_CASE("same seed reproduces the same noise") {
        LatentVolume z0 = random_latents({2, 3, 8, 8}, 12);
        Rng a(42), b(42);
        auto [zt1, n1] = add_noise(z0, 1.7, a);
        auto [zt2, n2] = add_noise(z0, 1.7, b);
        CHECK(n1.data.max_abs_diff(n2.data) == 0.0);
        CHECK(zt1.data.max_abs_diff(zt2.data) == 0.0);
    }

    TEST_CASE("empirical noise std matches sigma within 1%") {
        LatentVolume z0{Tensor::zeros({1, 1, 1000, 1000}), 1};
        Rng rng(77);
        double sigma = 0.8;
        auto [z_t, n] = add_noise(z0, sigma, rng);
        double sum2 = 0.0;
        for (int64_t i = 0; i < n.data.numel(); ++i) {
            sum2 += double(n.data[i]) * double(n.data[i]);
        }
        double std_hat = std::sqrt(sum2 / double(n.data.numel()));
        CHECK(std::abs(std_hat - sigma) / sigma < 0.01);
    }

    TEST_CASE("training sigma distribution is log-normal") {
        Rng rng(3);
        double sum = 0.0, sum2 = 0.0;
        const int n = 100000;
        for (int i = 0; i < n; ++i) {
            double ln_s = std::log(sample_training_sigma(rng));
            sum += ln_s;
            sum2 += ln_s * ln_s;
        }
        double mean = sum / n;
        double sd = std::sqrt(sum2 / n - mean * mean);
        CHECK(std::abs(mean + 1.2) < 0.02);
        CHECK(std::abs(sd - 1.2) < 0.02);
    }
}

TEST_SUITE("diffusion.denoise") {
    TEST_CASE("zero network collapses to c_skip * z_t") {
        LatentVolume z_t = random_latents({2, 3, 4, 4}, 21);
        ts::ZeroNetT<float> net;
        auto cond = trivial_cond(z_t.data.shape());
        DiffusionState state{z_t, 0.7, 0};
        LatentVolume out = denoise(state, cond, net);
        double c_skip = precondition(0.7).c_skip;
        for (int64_t i = 0; i < out.data.numel(); ++i) {
            CHECK(out.data[i] == doctest::Approx(float(c_skip) * z_t.data[i]).epsilon(1e-6));
        }
    }

    TEST_CASE("sigma to zero limit returns z_t for any net") {
        LatentVolume z_t = random_latents({1, 3, 4, 4}, 22);
        ConstNet net(3.0f);
        auto cond = trivial_cond(z_t.data.shape());
        DiffusionState state{z_t, 1e-6, 0};
        LatentVolume out = denoise(state, cond, net);
        CHECK(out.data.max_abs_diff(z_t.data) < 1e-5);
    }

    TEST_CASE("algebraic-inverse oracle recovers z0") {
        LatentVolume z0 = random_latents({2, 3, 4, 4}, 23, 0.5f);
        ts::OracleNetT<float> net(z0.data);
        auto cond = trivial_cond(z0.data.shape());
        Rng rng(9);
        for (double sigma : {0.05, 0.3, 1.0, 5.0, 20.0}) {
            auto [z_t, n] = add_noise(z0, sigma, rng);
            DiffusionState state{z_t, sigma, 0};
            LatentVolume out = denoise(state, cond, net);
            CHECK(out.data.max_abs_diff(z0.data) < 1e-5);
        }
    }

    TEST_CASE("denoise is affine in the network output") {
        LatentVolume z_t = random_latents({1, 3, 4, 4}, 24);
        auto cond = trivial_cond(z_t.data.shape());
        DiffusionState state{z_t, 1.3, 0};
        ConstNet n0(0.0f), n1(1.0f), n2(2.0f);
        LatentVolume d0 = denoise(state, cond, n0);
        LatentVolume d1 = denoise(state, cond, n1);
        LatentVolume d2 = denoise(state, cond, n2);
        for (int64_t i = 0; i < d0.data.numel(); ++i) {
            double lhs = double(d2.data[i]) - double(d0.data[i]);
            double rhs = 2.0 * (double(d1.data[i]) - double(d0.data[i]));
            CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
        }
    }

    TEST_CASE("misaligned masked latents are rejected") {
        LatentVolume z_t = random_latents({2, 3, 4, 4}, 25);
        ts::ZeroNetT<float> net;
        ConditionVars cond;
        cond.audio = Var::constant(Tensor::zeros({2, 5, 8}));
        cond.masked_latents = Var::constant(Tensor::zeros({2, 3, 8, 8}));
        DiffusionState state{z_t, 1.0, 0};
        try {
            denoise(state, cond, net);
            FAIL("expected SHAPE_MISMATCH");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::ShapeMismatch);
        }
    }
}

TEST_SUITE("diffusion.loss") {
    TEST_CASE("oracle prediction drives the loss to zero") {
        LatentVolume z0 = random_latents({1, 3, 4, 4}, 31, 0.5f);
        ts::OracleNetT<float> net(z0.data);
        auto cond = trivial_cond(z0.data.shape());
        LossWeights weights = LossWeights::edm_default();
        Rng rng(8);
        for (double sigma : {0.05, 0.5, 2.0, 20.0}) {
            auto [z_t, n] = add_noise(z0, sigma, rng);
            DiffusionState state{z_t, sigma, 0};
            CHECK(dsm_loss(z0, state, cond, net, weights) <= 1e-10);
        }
    }

    TEST_CASE("loss is nonnegative and zero only at exact prediction") {
        LatentVolume z0 = random_latents({1, 3, 4, 4}, 32, 0.5f);
        auto cond = trivial_cond(z0.data.shape());
        LossWeights weights = LossWeights::edm_default();
        ConstNet net(0.37f);
        Rng rng(12);
        auto [z_t, n] = add_noise(z0, 1.0, rng);
        DiffusionState state{z_t, 1.0, 0};
        double loss = dsm_loss(z0, state, cond, net, weights);
        CHECK(loss > 0.0);
    }

    TEST_CASE("lambda weighting is positive over the schedule range") {
        LossWeights weights = LossWeights::edm_default();
        NoiseSchedule sched;
        for (double s : sched.sigmas()) {
            if (s > 0) {
                CHECK(weights.lambda_sigma(s) > 0.0);
            }
        }
    }

    TEST_CASE("analytic loss gradients match central finite differences") {
        // 2x2 latent, double precision, scalar-parameter net
        Rng rng(33);
        TensorD z0 = TensorD::randn({1, 2, 2, 2}, rng, 0.5);
        TensorD z_t_val = z0;
        double sigma = 0.9;
        Rng noise_rng(7);
        for (int64_t i = 0; i < z_t_val.numel(); ++i) {
            z_t_val[i] += sigma * noise_rng.normal();
        }
        ts::ScalarNetT<double> net(0.4, -0.2);
        ConditionVarsT<double> cond;
        cond.audio = VarD::constant(TensorD::zeros({1, 5, 8}));
        cond.masked_latents = VarD::constant(TensorD::zeros(z0.shape()));
        LossWeights weights = LossWeights::edm_default();
        auto loss_fn = [&] {
            VarD z_t = VarD::constant(z_t_val);
            return dsm_loss_var<double>(z0, z_t, sigma, cond, net, weights);
        };
        double err = ts::max_relative_grad_error<double>({&net.a, &net.b}, loss_fn, 1e-6);
        CHECK(err < 1e-4);   // the pinned contract
        CHECK(err < 1e-8);   // actual precision in double
    }
}

TEST_SUITE("diffusion.cfg") {
    TEST_CASE("guidance scale identities") {
        Rng rng(41);
        Tensor cond_out = Tensor::randn({2, 3, 4, 4}, rng);
        Tensor uncond_out = Tensor::randn({2, 3, 4, 4}, rng);
        CHECK(cfg_combine(cond_out, uncond_out, 1.0).max_abs_diff(cond_out) == 0.0);
        CHECK(cfg_combine(cond_out, uncond_out, 0.0).max_abs_diff(uncond_out) == 0.0);
        CHECK(cfg_combine(cond_out, cond_out, 3.7).max_abs_diff(cond_out) == 0.0);
    }

    TEST_CASE("cfg is affine in the scale") {
        Rng rng(42);
        Tensor a = Tensor::randn({1, 2, 3, 3}, rng);
        Tensor b = Tensor::randn({1, 2, 3, 3}, rng);
        Tensor s1 = cfg_combine(a, b, 1.5);
        Tensor s2 = cfg_combine(a, b, 3.0);
        Tensor s0 = cfg_combine(a, b, 0.0);
        for (int64_t i = 0; i < a.numel(); ++i) {
            double lhs = double(s2[i]) - double(s0[i]);
            double rhs = 2.0 * (double(s1[i]) - double(s0[i]));
            CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
        }
    }

    TEST_CASE("shape mismatch is rejected") {
        Tensor a({1, 2, 3, 3}), b({1, 2, 4, 4});
        CHECK_THROWS_AS((void)cfg_combine(a, b, 1.0), Error);
    }
}

TEST_SUITE("diffusion.sampler") {
    TEST_CASE("schedule sigmas are strictly decreasing and end at zero") {
        NoiseSchedule sched{0.002, 80.0, 7.0, 15};
        auto sigmas = sched.sigmas();
        REQUIRE(sigmas.size() == 16);
        CHECK(sigmas.front() == doctest::Approx(80.0));
        CHECK(sigmas.back() == 0.0);
        for (size_t i = 0; i + 1 < sigmas.size(); ++i) {
            CHECK(sigmas[i] > sigmas[i + 1]);
        }
    }

    TEST_CASE("single-step oracle sampling recovers z0") {
        LatentVolume z0 = random_latents({2, 3, 4, 4}, 51, 0.5f);
        ts::OracleNetT<float> net(z0.data);
        auto cond = trivial_cond(z0.data.shape());
        NoiseSchedule sched{0.002, 80.0, 7.0, 1};
        Rng rng(5);
        LatentVolume noise{Tensor::randn(z0.data.shape(), rng), 1};
        LatentVolume out = sample(noise, cond, net, sched, 1.0);
        CHECK(out.data.max_abs_diff(z0.data) < 1e-5);
    }

    TEST_CASE("oracle sampling recovers z0 for arbitrary schedules") {
        LatentVolume z0 = random_latents({1, 3, 4, 4}, 52, 0.5f);
        ts::OracleNetT<float> net(z0.data);
        auto cond = trivial_cond(z0.data.shape());
        Rng rng(6);
        for (int steps : {2, 7, 15}) {
            for (double rho : {3.0, 7.0}) {
                NoiseSchedule sched{0.01, 40.0, rho, steps};
                LatentVolume noise{Tensor::randn(z0.data.shape(), rng), 1};
                LatentVolume out = sample(noise, cond, net, sched, 3.0);
                CHECK(out.data.max_abs_diff(z0.data) < 1e-5);
            }
        }
    }

    TEST_CASE("zero net shrinks the iterate exactly as the scalar recursion predicts") {
        LatentVolume z0 = random_latents({1, 2, 4, 4}, 53);
        ts::ZeroNetT<float> net;
        auto cond = trivial_cond(z0.data.shape());
        NoiseSchedule sched{0.01, 10.0, 7.0, 8};
        Rng rng(7);
        Tensor eps = Tensor::randn(z0.data.shape(), rng);
        LatentVolume noise{eps, 1};
        LatentVolume out = sample(noise, cond, net, sched, 1.0);

        // independent oracle: per-element factor prod(1 + ds*(1-c_skip)/s)
        auto sigmas = sched.sigmas();
        double factor = sigmas[0];
        for (size_t i = 0; i + 1 < sigmas.size(); ++i) {
            double c_skip = precondition(sigmas[i]).c_skip;
            factor *= 1.0 + (sigmas[i + 1] - sigmas[i]) * (1.0 - c_skip) / sigmas[i];
        }
        double max_err = 0.0;
        double norm_in = 0.0, norm_out = 0.0;
        for (int64_t i = 0; i < eps.numel(); ++i) {
            max_err = std::max(max_err, std::abs(double(out.data[i]) - factor * double(eps[i])));
            norm_in += double(eps[i]) * double(eps[i]);
            norm_out += double(out.data[i]) * double(out.data[i]);
        }
        CHECK(max_err < 1e-4);
        CHECK(norm_out < norm_in * sigmas[0] * sigmas[0]);
    }

    TEST_CASE("fixed seed gives bit-identical samples") {
        LatentVolume z0 = random_latents({1, 3, 4, 4}, 54, 0.5f);
        ts::FrameLocalNetT<float> net;
        auto cond = trivial_cond(z0.data.shape());
        NoiseSchedule sched{0.01, 10.0, 7.0, 5};
        Rng r1(100), r2(100);
        LatentVolume n1{Tensor::randn(z0.data.shape(), r1), 1};
        LatentVolume n2{Tensor::randn(z0.data.shape(), r2), 1};
        LatentVolume o1 = sample(n1, cond, net, sched, 3.0);
        LatentVolume o2 = sample(n2, cond, net, sched, 3.0);
        CHECK(o1.data.max_abs_diff(o2.data) == 0.0);
    }
}
