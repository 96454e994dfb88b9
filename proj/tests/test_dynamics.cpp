#include <algorithm>
#include <cmath>
#include <string>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pcnet/config.hpp"
#include "pcnet/dynamics.hpp"
#include "pcnet/network.hpp"

using namespace pcnet;

namespace {

// 1x8x8 input, two PCoders; the first predictor is swappable.
std::string two_level(const std::string& predictor, bool scaling) {
    return R"(
name = "dyn"
input_size = [1, 8, 8]
gradient_scaling = )" +
           std::string(scaling ? "true" : "false") + R"(

[backbone]
name = "dyn"
layers = [
  { type = "conv", out_channels = 4, kernel = 3, padding = 1 },
  { type = "relu" },
  { type = "maxpool2", label = "b1" },
  { type = "conv", out_channels = 6, kernel = 3, padding = 1 },
  { type = "relu", label = "b2" },
  { type = "flatten" },
  { type = "dense", out_features = 3 },
]

[[pcoders]]
module = "b1"
)" + predictor + R"(
[[pcoders]]
module = "b2"
)";
}

const char* kDeconvOnly = R"(predictor = [{ type = "deconv", out_channels = 1, kernel = 4, stride = 2, padding = 1 }])";
const char* kUpsampleDeconv =
    R"(predictor = [{ type = "upsample", factor = 2 }, { type = "deconv", out_channels = 1, kernel = 3, padding = 1 }])";
const char* kDeconvRelu =
    R"(predictor = [{ type = "deconv", out_channels = 1, kernel = 4, stride = 2, padding = 1 }, { type = "relu" }])";

// One PCoder only: 1x8x8 -> 4x4x4, head on top.
const char* kSinglePcoder = R"(
name = "single"
input_size = [1, 8, 8]

[backbone]
name = "single"
layers = [
  { type = "conv", out_channels = 4, kernel = 3, padding = 1 },
  { type = "relu" },
  { type = "maxpool2", label = "b1" },
  { type = "flatten" },
  { type = "dense", out_features = 3 },
]

[[pcoders]]
module = "b1"
)";

PCNetwork make_net(const std::string& toml, std::uint64_t seed = 7) { return build_network(parse_config(toml), {}, seed); }

Tensor random_image(const PCNetwork& net, std::uint64_t seed) {
    Rng rng(seed);
    return oracle::random_tensor(net.spec().backbone.input_size, rng, 0.0, 1.0);
}

PCNetwork with_all(const PCNetwork& net, HyperParams hp) { return net.with_hyperparams(std::vector<HyperParams>(net.size(), hp)); }

}  // namespace

// ---------------------------------------------------------------- sweep

TEST(Sweep, HeadAtTimestepZeroEqualsBackbone) {
    const PCNetwork net = make_net(two_level("", false));
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Tensor img = random_image(net, s);
        const PCNetworkState st = init_feedforward_sweep(net, img);
        const Tensor a = state_logits(net, st);
        const Tensor b = net.backbone_logits(img);
        ASSERT_EQ(a.numel(), b.numel());
        for (std::size_t k = 0; k < a.numel(); ++k) EXPECT_NEAR(a[k], b[k], 1e-5);
        EXPECT_EQ(st.t, 0u);
    }
}

TEST(Sweep, EpsMatchesIndependentReconstructionError) {
    const PCNetwork net = make_net(two_level(kUpsampleDeconv, false));
    const Tensor img = random_image(net, 3);
    const PCNetworkState st = init_feedforward_sweep(net, img);
    for (std::size_t i = 0; i < net.size(); ++i) {
        const oracle::Arr d = oracle::forward(net.pcoder(i).decoder, oracle::Arr(st.e[i + 1]));
        const double want = oracle::mse(oracle::Arr(st.e[i]), d);
        EXPECT_NEAR(st.eps[i], want, 1e-6 * std::max(1.0, want));
        // eps is exactly the mse of the stored residual
        EXPECT_DOUBLE_EQ(st.eps[i], sum_squares(st.residual[i]) / static_cast<double>(st.residual[i].numel()));
    }
}

TEST(Sweep, ZeroImageThroughZeroBiasEncoders) {
    const NetworkSpec spec = parse_config(two_level("", false));
    PCNetwork net = build_network(spec, {}, 5);
    WeightMap w = net.weights();
    for (auto& [name, t] : w)
        if (name.starts_with("backbone.") && name.ends_with(".bias")) t.fill(0.0f);
    net = build_network(spec, w);
    const PCNetworkState st = init_feedforward_sweep(net, Tensor(spec.backbone.input_size));
    for (std::size_t n = 1; n < st.e.size(); ++n) EXPECT_EQ(max_abs(st.e[n]), 0.0f);
    // decoders see zeros, so each prediction is its bias pushed through the decoder
    for (std::size_t i = 0; i < net.size(); ++i) {
        const oracle::Arr d = oracle::forward(net.pcoder(i).decoder, oracle::Arr(Tensor(st.e[i + 1].shape())));
        for (std::size_t k = 0; k < d.size(); ++k) EXPECT_NEAR(st.d[i][k], d.v[k], 1e-6);
    }
}

TEST(Sweep, RejectsWrongImageShape) {
    const PCNetwork net = make_net(two_level("", false));
    EXPECT_THROW(init_feedforward_sweep(net, Tensor({1, 9, 8})), ShapeError);
    EXPECT_THROW(init_feedforward_sweep(net, Tensor({2, 1, 8, 8})), ShapeError);
}

// ---------------------------------------------------------------- gradient

TEST(ErrorGradient, ZeroResidualGivesZeroGradient) {
    const PCNetwork net = make_net(two_level("", true));
    PCNetworkState st = init_feedforward_sweep(net, random_image(net, 1));
    for (auto& r : st.residual) r.fill(0.0f);
    for (std::size_t n = 1; n <= net.size(); ++n) EXPECT_EQ(max_abs(error_gradient(net, st, n)), 0.0f);
}

TEST(ErrorGradient, RejectsUninitializedState) {
    const PCNetwork net = make_net(two_level("", false));
    PCNetworkState st;
    EXPECT_THROW(error_gradient(net, st, 1), StateError);
    EXPECT_THROW(step(net, st), StateError);
    EXPECT_THROW(state_logits(net, st), StateError);
}

TEST(ErrorGradient, RejectsLayerIndexOutOfRange) {
    const PCNetwork net = make_net(two_level("", false));
    const PCNetworkState st = init_feedforward_sweep(net, random_image(net, 1));
    EXPECT_THROW(error_gradient(net, st, 0), std::out_of_range);
    EXPECT_THROW(error_gradient(net, st, 3), std::out_of_range);
}

// Finite differences of mse(e_{n-1}, decoder(e_n)) in double precision.
void check_gradient_against_fd(const std::string& predictor, std::size_t* checked) {
    const PCNetwork net = make_net(two_level(predictor, false), 11);
    const PCNetworkState st = init_feedforward_sweep(net, random_image(net, 21));
    const Tensor g = error_gradient(net, st, 1);
    const oracle::Arr target(st.e[0]);
    const auto& dec = net.pcoder(0).decoder;
    auto eps = [&](const oracle::Arr& e1) { return oracle::mse(target, oracle::forward(dec, e1)); };
    oracle::Arr e1(st.e[1]);
    const double scale = max_abs(g);
    ASSERT_GT(scale, 0.0f);
    for (std::size_t k = 0; k < e1.size(); ++k) {
        const double fd = oracle::central_diff(eps, e1, k, 1e-6);
        EXPECT_LT(oracle::rel_err(g[k], fd, scale), 1e-3) << predictor << " coordinate " << k;
        ++*checked;
    }
}

TEST(ErrorGradient, MatchesFiniteDifferencesForThreeDecoderShapes) {
    std::size_t checked = 0;
    check_gradient_against_fd(kDeconvOnly, &checked);
    check_gradient_against_fd(kUpsampleDeconv, &checked);
    check_gradient_against_fd(kDeconvRelu, &checked);
    EXPECT_GE(checked, 100u);
}

TEST(ErrorGradient, ScalingExampleSixteenOverThree) {
    // K = 16 predicted elements, C = 3*3*1
    const PCNetwork net = make_net(R"(
name = "k16"
input_size = [1, 4, 4]
gradient_scaling = true
[backbone]
name = "k16"
layers = [
  { type = "conv", out_channels = 2, kernel = 3, padding = 1, label = "c" },
  { type = "flatten" },
  { type = "dense", out_features = 2 },
]
[[pcoders]]
module = "c"
)");
    EXPECT_EQ(net.pcoder(0).K, 16u);
    EXPECT_EQ(net.pcoder(0).C, 9u);
    EXPECT_NEAR(net.pcoder(0).gradient_scale(), 16.0 / 3.0, 1e-12);
    const PCNetworkState st = init_feedforward_sweep(net, random_image(net, 2));
    const Tensor on = error_gradient(net, st, 1, true);
    const Tensor off = error_gradient(net, st, 1, false);
    for (std::size_t k = 0; k < on.numel(); ++k)
        if (off[k] != 0.0f) EXPECT_NEAR(on[k] / off[k], 16.0 / 3.0, 16.0 / 3.0 * 1e-6);
}

TEST(ErrorGradient, ScalingToggleIsExactScalarForThreeDecoders) {
    for (const char* p : {kDeconvOnly, kUpsampleDeconv, kDeconvRelu}) {
        const PCNetwork net = make_net(two_level(p, true));
        const PCNetworkState st = init_feedforward_sweep(net, random_image(net, 4));
        for (std::size_t n = 1; n <= net.size(); ++n) {
            const PCoder& pc = net.pcoder(n - 1);
            const double want = std::sqrt(static_cast<double>(pc.K) * pc.K / pc.C);
            const Tensor on = error_gradient(net, st, n, true);
            const Tensor off = error_gradient(net, st, n, false);
            const double ratio = std::sqrt(sum_squares(on) / sum_squares(off));
            EXPECT_NEAR(ratio, want, want * 1e-6) << p << " n=" << n;
            // direction unchanged
            const double cosine = dot(on, off) / std::sqrt(sum_squares(on) * sum_squares(off));
            EXPECT_NEAR(cosine, 1.0, 1e-6);
        }
    }
}

// ---------------------------------------------------------------- update rule

TEST(PcoderUpdate, ArithmeticExample) {
    const Tensor e({1}, {2.0f}), ff({1}, {1.0f}), fb({1}, {4.0f}), g({1}, {0.0f});
    const Tensor out = pcoder_update(e, ff, &fb, g, {0.5, 0.25, 0.01});
    EXPECT_FLOAT_EQ(out[0], 2.0f);
}

TEST(PcoderUpdate, MemoryOnlyAndPureFeedforward) {
    Rng rng(9);
    const Tensor e = oracle::random_tensor({2, 3, 4}, rng), ff = oracle::random_tensor({2, 3, 4}, rng);
    const Tensor fb = oracle::random_tensor({2, 3, 4}, rng), g = oracle::random_tensor({2, 3, 4}, rng);
    EXPECT_EQ(pcoder_update(e, ff, &fb, g, {0, 0, 0}), e);
    EXPECT_EQ(pcoder_update(e, ff, &fb, g, {1, 0, 0}), ff);
}

TEST(PcoderUpdate, TopLayerKeepsMemoryWeight) {
    const Tensor e({1}, {2.0f}), ff({1}, {1.0f}), g({1}, {1.0f});
    // 0.5*1 + (1 - 0.5 - 0.25)*2 - 0.1*1
    EXPECT_NEAR(pcoder_update(e, ff, nullptr, g, {0.5, 0.25, 0.1})[0], 0.5 + 0.5 - 0.1, 1e-7);
}

TEST(PcoderUpdate, RejectsInvalidHyperparamsAndShapes) {
    const Tensor a({3}), b({4});
    EXPECT_THROW(pcoder_update(a, a, &a, a, {0.9, 0.2, 0.0}), ValidationError);
    EXPECT_THROW(pcoder_update(a, a, &a, a, {0.5, 0.2, -1.0}), ValidationError);
    EXPECT_THROW(pcoder_update(a, b, &a, a, {0.3, 0.3, 0.0}), ShapeError);
    EXPECT_THROW(pcoder_update(a, a, &b, a, {0.3, 0.3, 0.0}), ShapeError);
}

TEST(PcoderUpdate, ConvexBoundWithoutErrorTerm) {
    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        const double beta = rng.uniform();
        const double lambda = rng.uniform() * (1.0 - beta);
        const Tensor e = oracle::random_tensor({16}, rng, -5, 5), ff = oracle::random_tensor({16}, rng, -5, 5);
        const Tensor fb = oracle::random_tensor({16}, rng, -5, 5), g = oracle::random_tensor({16}, rng, -5, 5);
        const Tensor out = pcoder_update(e, ff, &fb, g, {beta, lambda, 0.0});
        for (std::size_t k = 0; k < 16; ++k) {
            EXPECT_GE(out[k], std::min({e[k], ff[k], fb[k]}));
            EXPECT_LE(out[k], std::max({e[k], ff[k], fb[k]}));
        }
    }
}

// ---------------------------------------------------------------- stepping

TEST(Step, ConvexBoundHoldsInsideTheNetwork) {
    const PCNetwork net = with_all(make_net(two_level("", false)), {0.4, 0.35, 0.0});
    PCNetworkState st = init_feedforward_sweep(net, random_image(net, 8));
    for (int t = 0; t < 5; ++t) {
        const PCNetworkState before = st;
        step(net, st);
        for (std::size_t i = 0; i < net.size(); ++i) {
            const Tensor ff = net.encode(i, st.e[i]);
            const Tensor& prev = before.e[i + 1];
            const bool top = i + 1 == net.size();
            for (std::size_t k = 0; k < prev.numel(); ++k) {
                float lo = std::min(prev[k], ff[k]), hi = std::max(prev[k], ff[k]);
                // without feedback the missing lambda share acts as a zero operand
                const float third = top ? 0.0f : before.d[i + 1][k];
                lo = std::min(lo, third);
                hi = std::max(hi, third);
                EXPECT_GE(st.e[i + 1][k], lo);
                EXPECT_LE(st.e[i + 1][k], hi);
            }
        }
    }
}

TEST(Step, PureFeedforwardKeepsRepresentationsConstant) {
    const PCNetwork net = with_all(make_net(two_level("", true)), {1, 0, 0});
    const PCNetworkState s0 = init_feedforward_sweep(net, random_image(net, 5));
    PCNetworkState st = s0;
    for (int t = 0; t < 8; ++t) {
        step(net, st);
        for (std::size_t n = 0; n < st.e.size(); ++n)
            for (std::size_t k = 0; k < st.e[n].numel(); ++k) EXPECT_NEAR(st.e[n][k], s0.e[n][k], 1e-6);
    }
    EXPECT_EQ(st.t, 8u);
}

TEST(Step, AllZeroCoefficientsFreezeStateBitwise) {
    const PCNetwork net = with_all(make_net(two_level(kDeconvRelu, true)), {0, 0, 0});
    const PCNetworkState s0 = init_feedforward_sweep(net, random_image(net, 6));
    PCNetworkState st = s0;
    for (int t = 0; t < 8; ++t) step(net, st);
    EXPECT_EQ(st.e, s0.e);
    EXPECT_EQ(st.d, s0.d);
    EXPECT_EQ(st.eps, s0.eps);
}

TEST(Step, ErrorCorrectionAloneDescends) {
    for (bool scaling : {false, true}) {
        NetworkSpec spec = parse_config(kSinglePcoder);
        spec.gradient_scaling = scaling;
        const PCNetwork net = with_all(build_network(spec, {}, 3), {0, 0, 1e-3});
        for (std::uint64_t s = 0; s < 20; ++s) {
            PCNetworkState st = init_feedforward_sweep(net, random_image(net, 100 + s));
            for (int t = 0; t < 10; ++t) {
                const double before = st.eps[0];
                step(net, st);
                // verified by direct loss evaluation, not only the stored value
                const double direct =
                    oracle::mse(oracle::Arr(st.e[0]), oracle::forward(net.pcoder(0).decoder, oracle::Arr(st.e[1])));
                EXPECT_LE(direct, before + 1e-7);
                EXPECT_LE(st.eps[0], before + 1e-7);
            }
        }
    }
}

TEST(Step, ResidualSnapshotMatchesStoredEps) {
    const PCNetwork net = make_net(two_level(kUpsampleDeconv, true));
    PCNetworkState st = init_feedforward_sweep(net, random_image(net, 12));
    for (int t = 0; t < 4; ++t) {
        step(net, st);
        for (std::size_t i = 0; i < net.size(); ++i) {
            EXPECT_EQ(st.residual[i], st.e[i] - st.d[i]);
            EXPECT_DOUBLE_EQ(st.eps[i], sum_squares(st.residual[i]) / static_cast<double>(st.residual[i].numel()));
        }
    }
}

// ---------------------------------------------------------------- run_dynamics

TEST(RunDynamics, ZeroTimestepsIsFeedforward) {
    const PCNetwork net = make_net(two_level("", false));
    const Tensor img = random_image(net, 30);
    const auto out = run_dynamics(net, img, 0);
    ASSERT_EQ(out.size(), 1u);
    const Tensor b = net.backbone_logits(img);
    for (std::size_t k = 0; k < b.numel(); ++k) EXPECT_NEAR(out[0].logits[k], b[k], 1e-5);
}

TEST(RunDynamics, ReturnsTPlusOneEntriesAndIsDeterministic) {
    const PCNetwork net = make_net(two_level(kDeconvOnly, true));
    const Tensor img = random_image(net, 31);
    const auto a = run_dynamics(net, img, 6, true);
    const auto b = run_dynamics(net, img, 6, true);
    ASSERT_EQ(a.size(), 7u);
    for (std::size_t t = 0; t < a.size(); ++t) {
        EXPECT_EQ(a[t].t, t);
        EXPECT_EQ(a[t].logits, b[t].logits);
        EXPECT_EQ(a[t].eps, b[t].eps);
        EXPECT_EQ(a[t].reconstruction, b[t].reconstruction);
        EXPECT_EQ(a[t].representations, b[t].representations);
        EXPECT_EQ(a[t].reconstruction.shape(), net.spec().backbone.input_size);
        EXPECT_EQ(a[t].representations.size(), net.size());
    }
}

TEST(RunDynamics, MatchesManualStepping) {
    const PCNetwork net = make_net(two_level("", false));
    const Tensor img = random_image(net, 32);
    const auto out = run_dynamics(net, img, 3);
    PCNetworkState st = init_feedforward_sweep(net, img);
    for (std::size_t t = 1; t <= 3; ++t) {
        step(net, st);
        EXPECT_EQ(out[t].logits, state_logits(net, st));
    }
}
