// pcnet: command-line front end for training, running and benchmarking
// predictive-coding networks.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "pcnet/attack.hpp"
#include "pcnet/config.hpp"
#include "pcnet/data_io.hpp"
#include "pcnet/dynamics.hpp"
#include "pcnet/metrics.hpp"
#include "pcnet/network.hpp"
#include "pcnet/noise.hpp"
#include "pcnet/parallel.hpp"
#include "pcnet/training.hpp"
#include "pcnet/tuning.hpp"

namespace fs = std::filesystem;
using namespace pcnet;
using json = nlohmann::ordered_json;

namespace {

std::string fnv1a64(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return fmt::format("{:016x}", h);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto comma = s.find(',', start);
        const auto end = comma == std::string::npos ? s.size() : comma;
        if (end > start) out.push_back(s.substr(start, end - start));
        start = end + 1;
    }
    return out;
}

struct DataSource {
    std::string images, labels;
    std::uint64_t synth_seed = 0;
    std::size_t synth_n = 0;

    void add_options(CLI::App* app, const std::string& prefix, std::uint64_t seed, std::size_t n) {
        synth_seed = seed;
        synth_n = n;
        app->add_option("--" + prefix + "images", images, "IDX image file (3-D u8)");
        app->add_option("--" + prefix + "labels", labels, "IDX label file (1-D u8)");
        app->add_option("--" + prefix + "synth-seed", synth_seed, "seed of the synthetic set")->capture_default_str();
        app->add_option("--" + prefix + "synth-n", synth_n, "size of the synthetic set")->capture_default_str();
    }

    Dataset load(std::size_t class_count) const {
        if (images.empty() != labels.empty()) throw ValidationError("IDX datasets need both an image and a label file");
        if (!images.empty()) return load_idx_dataset(images, labels, class_count);
        return synth_dataset(synth_seed, synth_n);
    }

    json describe() const {
        if (!images.empty()) return {{"images", images}, {"labels", labels}};
        return {{"synth_seed", synth_seed}, {"synth_n", synth_n}};
    }
};

struct Common {
    std::string config;
    std::string out = ".";
    std::string run_id = "run";
    std::size_t threads = 0;
    std::vector<std::string> argv;
    json seeds = json::object();
    std::vector<std::string> weights_files;
    std::vector<std::string> outputs;

    fs::path path(const std::string& name) const { return fs::path(out) / name; }

    void write(const std::string& name, const std::string& text) {
        fs::create_directories(out);
        write_text_atomic(path(name), text);
        outputs.push_back(name);
    }

    void write_manifest(const std::string& command) {
        json m;
        m["engine_version"] = PCNET_VERSION;
        m["command"] = command;
        m["argv"] = argv;
        m["run_id"] = run_id;
        if (!config.empty()) m["config"] = {{"path", config}, {"fnv1a64", fnv1a64(read_file(config))}};
        json w = json::array();
        for (const auto& f : weights_files) w.push_back({{"path", f}, {"fnv1a64", fnv1a64(read_file(f))}});
        m["weights"] = w;
        m["seeds"] = seeds;
        m["threads"] = default_workers();
        json o = json::object();
        for (const auto& f : outputs) o[f] = fnv1a64(read_file(path(f)));
        m["outputs"] = o;
        fs::create_directories(out);
        write_text_atomic(path("manifest.json"), m.dump(2) + "\n");
    }
};

PCNetwork load_network(Common& c, const std::string& weights_path, std::optional<std::uint64_t> init_seed = std::nullopt) {
    const NetworkSpec spec = load_config(c.config);
    WeightMap w;
    if (!weights_path.empty()) {
        w = load_weights(read_file(weights_path));
        c.weights_files.push_back(weights_path);
    }
    return build_network(spec, w, init_seed);
}

void add_train_opts(CLI::App* app, TrainOpts& o) {
    app->add_option("--epochs", o.epochs)->capture_default_str();
    app->add_option("--batch-size", o.batch_size)->capture_default_str();
    app->add_option("--lr", o.learning_rate)->capture_default_str();
    app->add_option("--momentum", o.momentum)->capture_default_str();
    app->add_option("--seed", o.seed, "shuffling / initialization seed")->capture_default_str();
    app->add_flag("!--no-shuffle", o.shuffle, "keep dataset order");
}

json train_opts_json(const TrainOpts& o) {
    return {{"epochs", o.epochs}, {"batch_size", o.batch_size}, {"learning_rate", o.learning_rate},
            {"momentum", o.momentum}, {"seed", o.seed}, {"shuffle", o.shuffle}};
}

std::string shape_cell(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out;
}

std::string decoder_cell(const std::vector<Layer>& dec) {
    std::string out;
    for (const auto& l : dec) {
        if (!out.empty()) out += " > ";
        switch (l.desc.kind) {
            case LayerKind::upsample: out += fmt::format("upsample({})", l.desc.factor); break;
            case LayerKind::deconv:
            case LayerKind::conv:
                out += fmt::format("{}({}, {}x{}, s{}, p{})", to_string(l.desc.kind), l.desc.out_channels, l.desc.kernel,
                                   l.desc.kernel, l.desc.stride, l.desc.padding);
                break;
            default: out += to_string(l.desc.kind);
        }
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pcnet: predictive-coding dynamics on small convolutional classifiers"};
    app.require_subcommand(1);
    Common c;
    for (int i = 0; i < argc; ++i) c.argv.emplace_back(argv[i]);

    auto add_common = [&](CLI::App* sub, bool needs_config = true) {
        auto* opt = sub->add_option("--config", c.config, "network TOML file")->check(CLI::ExistingFile);
        if (needs_config) opt->required();
        sub->add_option("--out", c.out, "output directory")->capture_default_str();
        sub->add_option("--run-id", c.run_id, "identifier written into metric rows")->capture_default_str();
        sub->add_option("--threads", c.threads, "worker count (0 = all cores; PCNET_THREADS overrides)");
    };

    // train-backbone
    auto* tb = app.add_subcommand("train-backbone", "supervised training of the feedforward backbone");
    add_common(tb);
    TrainOpts tb_opts = default_backbone_opts();
    DataSource tb_train, tb_test;
    std::string tb_weights = "backbone.pcnw";
    add_train_opts(tb, tb_opts);
    tb_train.add_options(tb, "", 1, 10000);
    tb_test.add_options(tb, "test-", 2, 2000);
    tb->add_option("--out-weights", tb_weights, "weights file name inside --out")->capture_default_str();

    // train-feedback
    auto* tf = app.add_subcommand("train-feedback", "unsupervised training of the feedback decoders");
    add_common(tf);
    TrainOpts tf_opts = default_feedback_opts();
    DataSource tf_train, tf_test;
    std::string tf_in, tf_weights = "pcnet.pcnw";
    std::uint64_t tf_init = 1;
    add_train_opts(tf, tf_opts);
    tf_train.add_options(tf, "", 1, 10000);
    tf_test.add_options(tf, "test-", 2, 2000);
    tf->add_option("--weights", tf_in, "trained backbone weights")->required()->check(CLI::ExistingFile);
    tf->add_option("--init-seed", tf_init, "seed for decoders missing from --weights")->capture_default_str();
    tf->add_option("--out-weights", tf_weights, "weights file name inside --out")->capture_default_str();

    // run
    auto* rn = app.add_subcommand("run", "run the recurrent dynamics and write per-timestep logits");
    add_common(rn);
    std::string rn_weights, rn_image;
    std::optional<std::size_t> rn_index;
    std::size_t rn_t = 8;
    DataSource rn_data;
    rn->add_option("--weights", rn_weights)->required()->check(CLI::ExistingFile);
    rn->add_option("--timesteps", rn_t)->capture_default_str();
    rn->add_option("--image", rn_image, "IDX image file")->check(CLI::ExistingFile);
    rn->add_option("--index", rn_index, "only this image of the file");
    rn_data.add_options(rn, "", 2, 10);

    // benchmark-noise
    auto* bn = app.add_subcommand("benchmark-noise", "accuracy, CE and mCE under corruptions across timesteps");
    add_common(bn);
    std::string bn_weights, bn_kinds = "gaussian,shot,impulse,speckle";
    std::size_t bn_sev = 3, bn_t = 8;
    std::uint64_t bn_seed = 99;
    bool bn_curves = false;
    DataSource bn_data;
    bn->add_option("--weights", bn_weights)->required()->check(CLI::ExistingFile);
    bn->add_option("--kinds", bn_kinds, "comma-separated noise kinds")->capture_default_str();
    bn->add_option("--severities", bn_sev, "how many ladder steps per kind (1..3)")->capture_default_str();
    bn->add_option("--timesteps", bn_t)->capture_default_str();
    bn->add_option("--noise-seed", bn_seed)->capture_default_str();
    bn->add_flag("--curves", bn_curves, "also write reconstruction and representation-distance curves");
    bn_data.add_options(bn, "", 2, 2000);

    // benchmark-attack
    auto* ba = app.add_subcommand("benchmark-attack", "transfer attack crafted on the feedforward pass");
    add_common(ba);
    std::string ba_weights, ba_eps = "0.05,0.1,0.2";
    std::size_t ba_steps = 10, ba_t = 8;
    std::optional<std::size_t> ba_target;
    DataSource ba_data;
    ba->add_option("--weights", ba_weights)->required()->check(CLI::ExistingFile);
    ba->add_option("--epsilons", ba_eps, "comma-separated L-inf radii")->capture_default_str();
    ba->add_option("--steps", ba_steps)->capture_default_str();
    ba->add_option("--target", ba_target, "target class (untargeted when absent)");
    ba->add_option("--timesteps", ba_t)->capture_default_str();
    ba_data.add_options(ba, "", 2, 500);

    // tune
    auto* tu = app.add_subcommand("tune", "grid search of (beta, lambda, alpha) on noisy images");
    add_common(tu);
    std::string tu_weights, tu_mode = "whole", tu_betas = "0.2,0.4,0.6,0.8", tu_lambdas = "0,0.1,0.2,0.3",
                            tu_alphas = "0.01,0.1", tu_kind = "gaussian";
    double tu_sev = 0.5;
    std::uint64_t tu_seed = 5;
    DataSource tu_data;
    tu->add_option("--weights", tu_weights)->required()->check(CLI::ExistingFile);
    tu->add_option("--mode", tu_mode, "whole | per-pcoder")->check(CLI::IsMember({"whole", "per-pcoder"}))->capture_default_str();
    tu->add_option("--betas", tu_betas)->capture_default_str();
    tu->add_option("--lambdas", tu_lambdas)->capture_default_str();
    tu->add_option("--alphas", tu_alphas)->capture_default_str();
    tu->add_option("--noise", tu_kind)->capture_default_str();
    tu->add_option("--severity", tu_sev)->capture_default_str();
    tu->add_option("--noise-seed", tu_seed)->capture_default_str();
    tu_data.add_options(tu, "", 3, 200);

    // inspect
    auto* in = app.add_subcommand("inspect", "print the shape table of a network config");
    add_common(in);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        if (code != 0) std::cerr << app.help();
        return code == 0 ? 0 : 1;
    }

    try {
        if (c.threads) set_default_workers(c.threads);

        if (*tb) {
            const NetworkSpec spec = load_config(c.config);
            const std::size_t classes = build_network(spec, {}, 0).class_count();
            const Dataset train = tb_train.load(classes), test = tb_test.load(classes);
            const auto r = train_backbone(spec, train, tb_opts, &test);
            fs::create_directories(c.out);
            write_file_atomic(c.path(tb_weights), save_weights(r.weights));
            c.outputs.push_back(tb_weights);
            c.write("train_log.csv", train_log_csv(r.log));
            c.seeds = {{"train", train_opts_json(tb_opts)}, {"data", tb_train.describe()}, {"test_data", tb_test.describe()}};
            c.write_manifest("train-backbone");
            fmt::print("final test accuracy {:.4f}\n", r.log.back().accuracy);
        } else if (*tf) {
            const PCNetwork net = load_network(c, tf_in, tf_init);
            const Dataset train = tf_train.load(net.class_count()), test = tf_test.load(net.class_count());
            const auto r = train_feedback(net, train, tf_opts, &test);
            WeightMap all = net.backbone_weights();
            for (const auto& [k, v] : r.weights) all[k] = v;
            fs::create_directories(c.out);
            write_file_atomic(c.path(tf_weights), save_weights(all));
            c.outputs.push_back(tf_weights);
            c.write("feedback_log.csv", train_log_csv(r.log));
            c.seeds = {{"train", train_opts_json(tf_opts)}, {"decoder_init", tf_init}, {"data", tf_train.describe()},
                       {"test_data", tf_test.describe()}};
            c.write_manifest("train-feedback");
            fmt::print("held-out reconstruction loss {:.4f} -> {:.4f}\n", r.log.front().loss, r.log.back().loss);
        } else if (*rn) {
            const PCNetwork net = load_network(c, rn_weights);
            Tensor images;
            if (!rn_image.empty()) {
                images = read_idx(read_file(rn_image));
                if (images.rank() != 4) throw ValidationError("--image must be a 3-D IDX image file");
            } else {
                images = rn_data.load(net.class_count()).images;
            }
            Dataset ds{images, std::vector<std::size_t>(images.dim(0), 0), net.class_count()};
            std::vector<std::size_t> which;
            if (rn_index) {
                if (*rn_index >= ds.size()) throw ValidationError(fmt::format("--index {} out of range", *rn_index));
                which.push_back(*rn_index);
            } else {
                for (std::size_t i = 0; i < ds.size(); ++i) which.push_back(i);
            }
            std::vector<std::vector<TimestepOutput>> runs(which.size());
            parallel_for(which.size(), [&](std::size_t k) { runs[k] = run_dynamics(net, ds.image(which[k]), rn_t); });
            std::string csv = "image,timestep,prediction";
            for (std::size_t k = 0; k < net.class_count(); ++k) csv += fmt::format(",logit_{}", k);
            for (std::size_t n = 0; n < net.size(); ++n) csv += fmt::format(",eps_{}", n);
            csv += "\n";
            for (std::size_t k = 0; k < which.size(); ++k)
                for (const auto& o : runs[k]) {
                    csv += fmt::format("{},{},{}", which[k], o.t, argmax(o.logits));
                    for (float v : o.logits.values()) csv += fmt::format(",{}", v);
                    for (double e : o.eps) csv += fmt::format(",{}", e);
                    csv += "\n";
                }
            c.write("logits.csv", csv);
            c.seeds = {{"data", rn_image.empty() ? rn_data.describe() : json{{"images", rn_image}}}};
            c.write_manifest("run");
        } else if (*bn) {
            const PCNetwork net = load_network(c, bn_weights);
            const Dataset data = bn_data.load(net.class_count());
            std::vector<NoiseKind> kinds;
            std::vector<std::vector<double>> ladders;
            for (const auto& k : split_list(bn_kinds)) {
                const auto kind = parse_noise_kind(k);
                if (!kind) throw ValidationError("unknown noise kind '" + k + "'");
                auto ladder = default_severities(*kind);
                if (bn_sev < 1 || bn_sev > ladder.size())
                    throw ValidationError(fmt::format("--severities must be in 1..{}", ladder.size()));
                ladder.resize(bn_sev);
                kinds.push_back(*kind);
                ladders.push_back(ladder);
            }
            const auto bench = benchmark_noise(net, data, kinds, ladders, bn_seed, bn_t);
            std::vector<MetricsRecord> rec;
            std::string ce = "noise_kind,timestep,ce,baseline\n";
            for (const auto& k : bench.kinds) {
                const std::string name = to_string(k.kind);
                for (std::size_t t = 0; t <= bn_t; ++t) {
                    for (std::size_t s = 0; s < k.severities.size(); ++s)
                        rec.push_back({c.run_id, "error_rate", name, k.severities[s], std::nullopt, t, k.error[t][s]});
                    if (k.ce[t]) rec.push_back({c.run_id, "ce", name, std::nullopt, std::nullopt, t, *k.ce[t]});
                    ce += fmt::format("{},{},{},{}\n", name, t, k.ce[t] ? fmt::format("{}", *k.ce[t]) : "", k.ce[0] ? "1" : "");
                }
                if (!k.ce[0]) std::cerr << fmt::format("warning: baseline never errs on {}; CE undefined, excluded from mCE\n", name);
            }
            for (std::size_t t = 0; t <= bn_t; ++t) {
                if (bench.mce[t]) rec.push_back({c.run_id, "mce", "", std::nullopt, std::nullopt, t, *bench.mce[t]});
                ce += fmt::format("mean,{},{},{}\n", t, bench.mce[t] ? fmt::format("{}", *bench.mce[t]) : "",
                                  bench.mce[0] ? "1" : "");
            }
            if (bn_curves) {
                for (std::size_t k = 0; k < kinds.size(); ++k) {
                    const NoiseSpec ns{kinds[k], ladders[k].back(), bn_seed};
                    const std::string name = to_string(kinds[k]);
                    const auto rc = reconstruction_mse_curve(net, data, ns, bn_t);
                    for (std::size_t t = 0; t <= bn_t; ++t) {
                        rec.push_back({c.run_id, "reconstruction_mse", name, ns.severity, std::nullopt, t, rc.raw[t]});
                        rec.push_back({c.run_id, "reconstruction_mse_normalized", name, ns.severity, std::nullopt, t, rc.normalized[t]});
                    }
                    const auto dc = representation_distance_curve(net, data, ns, bn_t);
                    for (std::size_t n = 0; n < dc.layers.size(); ++n)
                        for (std::size_t t = 0; t <= bn_t; ++t) {
                            rec.push_back({c.run_id, "correlation_distance", name, ns.severity, n + 1, t, dc.layers[n].raw[t]});
                            rec.push_back({c.run_id, "correlation_distance_normalized", name, ns.severity, n + 1, t,
                                           dc.layers[n].normalized[t]});
                        }
                    if (dc.degenerate)
                        std::cerr << fmt::format("note: {} zero-variance representation pairs on {}\n", dc.degenerate, name);
                }
            }
            c.write("ce.csv", ce);
            c.write("metrics.csv", metrics_csv(rec));
            c.write("summary.json", metrics_json(rec));
            c.seeds = {{"noise_seed", bn_seed}, {"data", bn_data.describe()}};
            c.write_manifest("benchmark-noise");
        } else if (*ba) {
            const PCNetwork net = load_network(c, ba_weights);
            const Dataset data = ba_data.load(net.class_count());
            const auto subset = qualifying_subset(net, data, ba_t, ba_target);
            std::string csv = "epsilon,timestep,success_rate,qualifying\n";
            std::vector<MetricsRecord> rec;
            for (const auto& e : split_list(ba_eps)) {
                const auto r = transfer_attack_eval(net, data, subset, std::stod(e), ba_target, ba_steps, ba_t);
                for (std::size_t t = 0; t <= ba_t; ++t) {
                    csv += fmt::format("{},{},{},{}\n", r.epsilon, t, r.success[t], r.qualifying);
                    rec.push_back({c.run_id, fmt::format("attack_success_eps_{}", r.epsilon), "", std::nullopt, std::nullopt, t,
                                   r.success[t]});
                }
            }
            c.write("attack.csv", csv);
            c.write("metrics.csv", metrics_csv(rec));
            c.seeds = {{"data", ba_data.describe()}, {"target", ba_target ? json(*ba_target) : json(nullptr)}, {"steps", ba_steps}};
            c.write_manifest("benchmark-attack");
        } else if (*tu) {
            const PCNetwork net = load_network(c, tu_weights);
            const Dataset data = tu_data.load(net.class_count());
            auto parse_grid = [](const std::string& s) {
                std::vector<double> v;
                for (const auto& x : split_list(s)) v.push_back(std::stod(x));
                return v;
            };
            const auto kind = parse_noise_kind(tu_kind);
            if (!kind) throw ValidationError("unknown noise kind '" + tu_kind + "'");
            const SearchSpace space{parse_grid(tu_betas), parse_grid(tu_lambdas), parse_grid(tu_alphas)};
            const auto r = tune_hyperparams(net, data, NoiseSpec{*kind, tu_sev, tu_seed}, space,
                                            tu_mode == "whole" ? TuneMode::whole_network : TuneMode::per_pcoder);
            c.write("tune_log.csv", tune_log_csv(r));
            c.write("tuned.toml", serialize_config(net.with_hyperparams(r.hps).spec()));
            c.seeds = {{"noise_seed", tu_seed}, {"data", tu_data.describe()}};
            c.write_manifest("tune");
            for (std::size_t i = 0; i < r.hps.size(); ++i) fmt::print("pcoder {}: {}\n", i + 1, to_string(r.hps[i]));
            fmt::print("objective {}\n", r.objective);
        } else if (*in) {
            const PCNetwork net = build_network(load_config(c.config), {}, 0);
            fmt::print("{}: input {}, {} PCoders, {} classes, gradient_scaling {}\n", net.spec().name,
                       shape_cell(net.spec().backbone.input_size), net.size(), net.class_count(), net.gradient_scaling());
            fmt::print("{:<7} {:<8} {:<10} {:<10} {:>6} {:>5} {:>9}  {:<34} {}\n", "pcoder", "layers", "e_n", "d_n-1", "K",
                       "C", "scale", "decoder", "hyperparameters");
            for (std::size_t i = 0; i < net.size(); ++i) {
                const PCoder& pc = net.pcoder(i);
                fmt::print("{:<7} {:<8} {:<10} {:<10} {:>6} {:>5} {:>9.4f}  {:<34} {}\n", i + 1,
                           fmt::format("{}-{}", pc.first_layer, pc.last_layer), shape_cell(pc.output_shape),
                           shape_cell(pc.predicted_shape), pc.K, pc.C, pc.gradient_scale(), decoder_cell(pc.decoder),
                           to_string(pc.hp));
            }
            if (in->count("--out")) c.write_manifest("inspect");
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {  // ValidationError, ShapeError
        std::cerr << "invalid input: " << e.what() << "\n";
        return 1;
    } catch (const std::out_of_range& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
