// End-to-end acceptance run on the desk-scale pipeline. Prints one PASS/FAIL
// line per criterion and exits non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "oracles.hpp"
#include "pcnet/attack.hpp"
#include "pcnet/config.hpp"
#include "pcnet/data_io.hpp"
#include "pcnet/dynamics.hpp"
#include "pcnet/metrics.hpp"
#include "pcnet/noise.hpp"
#include "pcnet/training.hpp"
#include "pcnet/tuning.hpp"

using namespace pcnet;

namespace {

// Tolerances and budgets.
constexpr double kLogitTol = 1e-5;
constexpr double kFdTol = 1e-3;
constexpr double kAdjointTol = 1e-4;
constexpr double kDescentSlack = 1e-7;
constexpr double kFrozenTol = 1e-6;
constexpr double kFeedbackDrop = 0.10;
constexpr double kCleanDropAllowed = 0.03;
constexpr double kScaleTol = 1e-6;
constexpr double kOneMinute = 60.0, kTenMinutes = 600.0, kHalfHour = 1800.0;

constexpr double kSigma = 0.5;
constexpr std::size_t kT = 8;
constexpr std::uint64_t kNoiseSeed = 99, kTuneNoiseSeed = 5;
const std::vector<double> kEpsilons{0.05, 0.1, 0.2};
constexpr std::size_t kAttackSteps = 10, kAttackImages = 500;

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
    int id;
    std::string line;
};
std::vector<Outcome> outcomes;
int failures = 0;

// Recorded as criteria complete; printed in criterion order at the end.
void report(int id, const char* name, bool pass, const std::string& detail) {
    if (!pass) ++failures;
    outcomes.push_back({id, fmt::format("{} [{:>2}] {}: {}", pass ? "PASS" : "FAIL", id, name, detail)});
    fmt::print(stderr, "  done {}\n", id);
}

std::string spec_text(const std::string& predictor, bool scaling, bool second) {
    std::string s = fmt::format(R"(
name = "acc"
input_size = [1, 16, 16]
gradient_scaling = {}
[backbone]
name = "acc"
layers = [
  {{ type = "conv", out_channels = 8, kernel = 3, padding = 1 }},
  {{ type = "relu" }},
  {{ type = "maxpool2", label = "b1" }},
  {{ type = "conv", out_channels = 16, kernel = 3, padding = 1 }},
  {{ type = "relu" }},
  {{ type = "maxpool2", label = "b2" }},
  {{ type = "flatten" }},
  {{ type = "dense", out_features = 5 }},
]
[[pcoders]]
module = "b1"
{}
)",
                                scaling, predictor);
    if (second) s += "[[pcoders]]\nmodule = \"b2\"\n";
    return s;
}

const std::vector<std::pair<const char*, std::string>> kDecoders{
    {"deconv-only", R"(predictor = [{ type = "deconv", out_channels = 1, kernel = 4, stride = 2, padding = 1 }])"},
    {"upsample+deconv",
     R"(predictor = [{ type = "upsample", factor = 2 }, { type = "deconv", out_channels = 1, kernel = 3, padding = 1 }])"},
    {"deconv+relu",
     R"(predictor = [{ type = "deconv", out_channels = 1, kernel = 4, stride = 2, padding = 1 }, { type = "relu" }])"},
};

std::string joined(const std::vector<double>& v, int prec = 3) {
    std::string s;
    for (double x : v) s += (s.empty() ? "" : " ") + fmt::format("{:.{}f}", x, prec);
    return s;
}

}  // namespace

int main() {
    const auto start = Clock::now();
    const NetworkSpec spec = load_config(std::string(PCNET_SOURCE_DIR) + "/configs/tinynet3.toml");
    const Dataset train = synth_dataset(1, 10000), test = synth_dataset(2, 2000), tune_set = synth_dataset(3, 200);
    const NoiseSpec noise{NoiseKind::gaussian, kSigma, kNoiseSeed};

    // ---------------------------------------------------------------- invariants on small nets

    {  // 2: gradient against finite differences
        const auto t = Clock::now();
        std::size_t coords = 0;
        double worst = 0;
        for (const auto& [name, pred] : kDecoders) {
            const PCNetwork net = build_network(parse_config(spec_text(pred, false, true)), {}, 11);
            Rng rng(21);
            const PCNetworkState st = init_feedforward_sweep(net, oracle::random_tensor({1, 16, 16}, rng, 0, 1));
            const Tensor g = error_gradient(net, st, 1);
            const oracle::Arr target(st.e[0]);
            const auto& dec = net.pcoder(0).decoder;
            auto eps = [&](const oracle::Arr& e) { return oracle::mse(target, oracle::forward(dec, e)); };
            oracle::Arr e1(st.e[1]);
            const double scale = max_abs(g);
            // every fifth coordinate, 103 per decoder
            for (std::size_t k = 0; k < e1.size(); k += 5, ++coords)
                worst = std::max(worst, oracle::rel_err(g[k], oracle::central_diff(eps, e1, k, 1e-6), scale));
        }
        const double secs = since(t);
        report(2, "gradient oracle", worst < kFdTol && coords >= 100 && secs < kOneMinute,
               fmt::format("max rel err {:.2e} < {:.0e} over {} coordinates, 3 decoder shapes, {:.1f}s", worst, kFdTol, coords,
                           secs));
    }

    {  // 3: conv/deconv adjointness
        Rng rng(3);
        int checked = 0;
        double worst = 0;
        while (checked < 100) {
            const std::size_t c = 1 + rng.below(4), o = 1 + rng.below(4), k = 1 + rng.below(4), s = 1 + rng.below(3);
            const std::size_t p = rng.below(k), h = k + rng.below(7), w = k + rng.below(7);
            if ((h + 2 * p - k) % s || (w + 2 * p - k) % s) continue;
            const Tensor x = oracle::random_tensor({1 + rng.below(2), c, h, w}, rng);
            LayerWeights lw{oracle::random_tensor({o, c, k, k}, rng), {}, s, p};
            const Tensor cx = conv2d(x, lw);
            const Tensor y = oracle::random_tensor(cx.shape(), rng);
            const double lhs = dot(cx, y), rhs = dot(x, deconv2d(y, lw));
            worst = std::max(worst, std::fabs(lhs - rhs) / std::max({std::fabs(lhs), std::fabs(rhs), 1e-12}));
            ++checked;
        }
        report(3, "adjointness", worst < kAdjointTol,
               fmt::format("max rel |<conv x,y> - <x,deconv y>| = {:.2e} < {:.0e} over {} configs", worst, kAdjointTol, checked));
    }

    {  // 4: descent with error correction only
        const PCNetwork net = build_network(parse_config(spec_text("", false, false)), {}, 4)
                                  .with_hyperparams({{0.0, 0.0, 1e-3}});
        const Dataset imgs = synth_dataset(4, 50);
        double worst = -INFINITY;
        for (std::size_t i = 0; i < imgs.size(); ++i) {
            PCNetworkState st = init_feedforward_sweep(net, imgs.image(i));
            for (int t = 0; t < 10; ++t) {
                const double before = st.eps[0];
                step(net, st);
                worst = std::max(worst, st.eps[0] - before);
            }
        }
        report(4, "descent property", worst <= kDescentSlack,
               fmt::format("max eps_0(t+1) - eps_0(t) = {:.2e} <= {:.0e} (50 inputs x 10 steps, alpha 1e-3)", worst,
                           kDescentSlack));
    }

    {  // 12: gradient scaling factor
        double worst = 0;
        std::string factors;
        for (const auto& [name, pred] : kDecoders) {
            const PCNetwork net = build_network(parse_config(spec_text(pred, true, true)), {}, 12);
            Rng rng(12);
            const PCNetworkState st = init_feedforward_sweep(net, oracle::random_tensor({1, 16, 16}, rng, 0, 1));
            const PCoder& pc = net.pcoder(0);
            const double want = std::sqrt(static_cast<double>(pc.K) * pc.K / pc.C);
            const Tensor on = error_gradient(net, st, 1, true), off = error_gradient(net, st, 1, false);
            for (std::size_t k = 0; k < on.numel(); ++k)
                if (off[k] != 0.0f) worst = std::max(worst, std::fabs(on[k] / (want * off[k]) - 1.0));
            factors += fmt::format("{}{}: K={} C={} x{:.4f}", factors.empty() ? "" : "; ", name, pc.K, pc.C, want);
        }
        report(12, "gradient scaling", worst < kScaleTol,
               fmt::format("max rel deviation from sqrt(K^2/C) = {:.2e} < {:.0e} ({})", worst, kScaleTol, factors));
    }

    bool ce_formula_ok = false;
    std::string ce_formula;
    {  // 10: CE arithmetic
        const std::vector<double> base{0.4, 0.2, 0.6}, half{0.2, 0.1, 0.3};
        const auto h = corruption_error(half, base);
        bool ok = h && *h == 0.5;
        std::string self;
        for (auto k : {NoiseKind::gaussian, NoiseKind::shot, NoiseKind::impulse, NoiseKind::speckle}) {
            Rng rng(static_cast<std::uint64_t>(k));
            std::vector<double> e(3);
            for (auto& x : e) x = rng.uniform(0.05, 0.95);
            const auto c = corruption_error(e, e);
            ok = ok && c && *c == 1.0;
            self += fmt::format(" {}={}", to_string(k), c ? fmt::format("{}", *c) : "undef");
        }
        ce_formula_ok = ok;
        ce_formula = fmt::format("half case = {}; self CE:{}", h ? *h : NAN, self);
    }

    // ---------------------------------------------------------------- training

    const auto t_bb = Clock::now();
    const auto bb = train_backbone(spec, train, default_backbone_opts(), &test);
    fmt::print("backbone: test accuracy {:.4f} after {} epochs ({:.0f}s)\n", bb.log.back().accuracy,
               default_backbone_opts().epochs, since(t_bb));

    const PCNetwork fresh = build_network(spec, bb.weights, 1);
    const auto t_fb = Clock::now();
    const auto fb = train_feedback(fresh, train, default_feedback_opts(), &test);
    const double fb_secs = since(t_fb);
    std::vector<double> held_out;
    for (const auto& r : fb.log)
        if (r.split == "test") held_out.push_back(r.loss);
    {  // 6
        const double drop = 1.0 - held_out.at(1) / held_out.at(0);
        report(6, "feedback training", drop >= kFeedbackDrop && fb_secs < kTenMinutes,
               fmt::format("held-out loss {:.1f} -> {:.1f} after 1 epoch ({:.1f}% drop >= {:.0f}%); {} epochs in {:.0f}s",
                           held_out[0], held_out[1], 100 * drop, 100 * kFeedbackDrop, held_out.size() - 1, fb_secs));
    }
    const PCNetwork trained = fresh.with_weights(fb.weights);

    {  // 13: I/O exactness
        bool ok = true;
        std::string detail;
        const auto bytes = save_weights(trained.weights());
        const WeightMap back = load_weights(bytes);
        ok = ok && save_weights(back) == bytes && back == trained.weights();
        Rng rng(13);
        int trials = 0;
        for (; trials < 100; ++trials) {
            WeightMap m;
            for (std::size_t j = 0, n = rng.below(5); j < n; ++j) {
                Tensor t({1 + rng.below(4), 1 + rng.below(4)});
                for (float& x : t.values()) {
                    const auto u = static_cast<std::uint32_t>(rng.next_u64());
                    std::memcpy(&x, &u, 4);
                }
                m["w" + std::to_string(j)] = std::move(t);
            }
            const auto b = save_weights(m);
            ok = ok && save_weights(load_weights(b)) == b;
        }
        detail += fmt::format("PCNW round trip bitwise ({} weights + {} random maps)", back.size(), trials);
        // IDX: 2x4x4 header with a 31-byte payload and a bad type byte
        std::vector<std::uint8_t> idx{0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 4, 0, 0, 0, 4};
        idx.resize(16 + 31, 7);
        std::size_t trunc_at = 0, magic_at = 99;
        try { read_idx(idx); } catch (const FormatError& e) { trunc_at = e.offset(); }
        idx[2] = 0x0B;
        try { read_idx(idx); } catch (const FormatError& e) { magic_at = e.offset(); }
        ok = ok && trunc_at == 47 && magic_at == 2;
        detail += fmt::format("; IDX truncation at offset {}, bad type at offset {}", trunc_at, magic_at);
        // equal seeds: training and corruption sets
        TrainOpts o = default_backbone_opts();
        o.epochs = 1;
        const Dataset small = train.head(1000);
        o.workers = 1;
        const auto r1 = train_backbone(spec, small, o);
        o.workers = 2;
        const auto r2 = train_backbone(spec, small, o);
        const bool corrupt_same = apply_noise(test, noise).images == apply_noise(test, noise).images;
        ok = ok && r1.weights == r2.weights && corrupt_same;
        detail += fmt::format("; training reruns {}, corruption sets {}", r1.weights == r2.weights ? "identical" : "DIFFER",
                              corrupt_same ? "identical" : "DIFFER");
        report(13, "I/O exactness", ok, detail);
    }

    {  // 1: timestep-0 equivalence
        const auto t = Clock::now();
        double worst = 0;
        for (std::size_t i = 0; i < 500; ++i) {
            const Tensor img = test.image(i);
            const Tensor a = run_dynamics(trained, img, 0)[0].logits, b = trained.backbone_logits(img);
            for (std::size_t k = 0; k < a.numel(); ++k) worst = std::max(worst, static_cast<double>(std::fabs(a[k] - b[k])));
        }
        const double secs = since(t);
        report(1, "timestep-0 equivalence", worst < kLogitTol && secs < kOneMinute,
               fmt::format("max |logit diff| = {:.2e} < {:.0e} over 500 images, {:.1f}s", worst, kLogitTol, secs));
    }

    {  // 5: degenerate modes
        const PCNetwork pure_ff = trained.with_hyperparams(std::vector<HyperParams>(trained.size(), {1, 0, 0}));
        const PCNetwork frozen = trained.with_hyperparams(std::vector<HyperParams>(trained.size(), {0, 0, 0}));
        double drift = 0;
        bool bitwise = true;
        for (std::size_t i = 0; i < 50; ++i) {
            const Tensor img = apply_noise(test.image(i), noise, i);
            const PCNetworkState s0 = init_feedforward_sweep(pure_ff, img);
            PCNetworkState s = s0, f = init_feedforward_sweep(frozen, img);
            const PCNetworkState f0 = f;
            for (std::size_t t = 0; t < kT; ++t) {
                step(pure_ff, s);
                step(frozen, f);
                for (std::size_t n = 1; n < s.e.size(); ++n)
                    for (std::size_t k = 0; k < s.e[n].numel(); ++k)
                        drift = std::max(drift, static_cast<double>(std::fabs(s.e[n][k] - s0.e[n][k])));
                bitwise = bitwise && f.e == f0.e && f.d == f0.d && f.eps == f0.eps;
            }
        }
        report(5, "degenerate modes", drift <= kFrozenTol && bitwise,
               fmt::format("(1,0,0): max |e_n(t) - e_n(0)| = {:.2e} <= {:.0e}; (0,0,0): state {} over {} steps, 50 images",
                           drift, kFrozenTol, bitwise ? "bitwise frozen" : "CHANGED", kT));
    }

    {  // 10 continued: the benchmark on the trained net
        const std::vector<NoiseKind> kinds{NoiseKind::gaussian, NoiseKind::shot, NoiseKind::impulse, NoiseKind::speckle};
        std::vector<std::vector<double>> ladders;
        for (auto k : kinds) ladders.push_back(default_severities(k));
        const NoiseBenchmark b = benchmark_noise(trained, test.head(300), kinds, ladders, kNoiseSeed, 0);
        bool ok = b.mce[0] && *b.mce[0] == 1.0;
        std::string detail;
        for (const auto& c : b.kinds) {
            ok = ok && c.ce[0] && *c.ce[0] == 1.0;
            detail += fmt::format(" {}={}", to_string(c.kind), c.ce[0] ? fmt::format("{}", *c.ce[0]) : "undef");
        }
        report(10, "CE/mCE arithmetic", ok && ce_formula_ok,
               fmt::format("{}; benchmark baseline vs itself:{}, mCE={}", ce_formula, detail,
                           b.mce[0] ? fmt::format("{}", *b.mce[0]) : "undef"));
    }

    // ---------------------------------------------------------------- tuned dynamics

    const auto t_tune = Clock::now();
    const SearchSpace space{{0.2, 0.4, 0.6, 0.8}, {0.0, 0.1, 0.2, 0.3}, {0.01, 0.1}};
    const TuneResult tuned = tune_hyperparams(trained, tune_set, {NoiseKind::gaussian, kSigma, kTuneNoiseSeed}, space,
                                              TuneMode::whole_network);
    const PCNetwork net = trained.with_hyperparams(tuned.hps);
    fmt::print("tuned (whole network): {} objective {:.4f}\n", to_string(tuned.hps[0]), tuned.objective);

    {  // 9
        const Dataset noisy = apply_noise(test, noise);
        const EvalResult n = evaluate(net, noisy, kT), c = evaluate(net, test, kT);
        const double best = *std::max_element(n.accuracy.begin() + 1, n.accuracy.end());
        const double secs = since(t_tune);
        const bool ok = best >= n.accuracy[0] && c.accuracy[kT] >= c.accuracy[0] - kCleanDropAllowed && secs < kHalfHour;
        report(9, "robustness direction", ok,
               fmt::format("noisy acc t=0..8 [{}], best t>=1 {:.4f} >= {:.4f}; clean {:.4f} -> {:.4f} (allowed drop {:.2f}); "
                           "{:.0f}s incl. tuning",
                           joined(n.accuracy), best, n.accuracy[0], c.accuracy[0], c.accuracy[kT], kCleanDropAllowed, secs));
    }

    {  // 7
        const Curve r = reconstruction_mse_curve(net, test, noise, kT);
        report(7, "denoising direction", r.raw[kT] < r.raw[0],
               fmt::format("mean mse(d_0, clean) {:.5f} (t=0) -> {:.5f} (t=8); normalized [{}]", r.raw[0], r.raw[kT],
                           joined(r.normalized)));
    }

    {  // 8
        const DistanceCurves d = representation_distance_curve(net, test, noise, kT);
        const Curve& top = d.layers.back();
        report(8, "projection direction", top.normalized[kT] < 1.0,
               fmt::format("top-layer normalized distance at t=8 {:.4f} < 1.0; curve [{}]; {} degenerate pairs",
                           top.normalized[kT], joined(top.normalized), d.degenerate));
    }

    {  // 11: untargeted transfer attack
        const auto t = Clock::now();
        const Dataset subset_data = test.head(kAttackImages);
        const auto subset = qualifying_subset(net, subset_data, kT, std::nullopt);
        int wins = 0;
        std::string detail;
        for (double eps : kEpsilons) {
            const AttackResult r = transfer_attack_eval(net, subset_data, subset, eps, std::nullopt, kAttackSteps, kT);
            double late = 0;
            for (std::size_t s = 4; s <= 8; ++s) late += r.success[s];
            late /= 5.0;
            const bool win = late <= r.success[0];
            wins += win;
            detail += fmt::format("{}eps {}: t0 {:.3f} vs mean t4-8 {:.3f}{}", detail.empty() ? "" : "; ", eps, r.success[0],
                                  late, win ? "" : " (worse)");
        }
        const double secs = since(t);
        report(11, "transfer-attack direction", wins >= 2 && secs < kTenMinutes,
               fmt::format("{}/3 epsilons improve ({} qualifying images, untargeted, {} steps): {}; {:.0f}s", wins,
                           subset.size(), kAttackSteps, detail, secs));
    }

    std::sort(outcomes.begin(), outcomes.end(), [](const Outcome& a, const Outcome& b) { return a.id < b.id; });
    for (const auto& o : outcomes) fmt::print("{}\n", o.line);
    fmt::print("{} of {} criteria failed; total {:.0f}s\n", failures, outcomes.size(), since(start));
    return failures ? 1 : 0;
}
