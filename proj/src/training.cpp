#include "pcnet/training.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "pcnet/dynamics.hpp"
#include "pcnet/hyperparams.hpp"
#include "pcnet/parallel.hpp"

namespace pcnet {

void TrainOpts::validate() const {
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw ValidationError(fmt::format("learning_rate must be finite and >= 0, got {}", learning_rate));
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError(fmt::format("momentum must be in [0, 1), got {}", momentum));
}

TrainOpts default_backbone_opts() {
    TrainOpts o;
    o.epochs = 4;
    o.learning_rate = 0.05;
    return o;
}

TrainOpts default_feedback_opts() {
    TrainOpts o;
    o.epochs = 6;
    o.learning_rate = 1e-5;
    return o;
}

namespace {

// Trainable tensors of a layer list, in layer order (kernel then bias).
std::vector<Tensor*> collect_params(std::vector<Layer>& layers) {
    std::vector<Tensor*> out;
    for (auto& l : layers)
        if (l.desc.has_params()) {
            out.push_back(&l.params.kernel);
            out.push_back(&l.params.bias);
        }
    return out;
}

void append_grads(const std::vector<Layer>& layers, std::vector<ParamGrad>& pg, std::vector<Tensor>& out) {
    for (std::size_t i = 0; i < layers.size(); ++i)
        if (layers[i].desc.has_params()) {
            out.push_back(std::move(pg[i].kernel));
            out.push_back(std::move(pg[i].bias));
        }
}

class Sgd {
public:
    Sgd(std::vector<Tensor*> params, double lr, double momentum) : params_(std::move(params)), lr_(lr), mu_(momentum) {
        for (auto* p : params_) velocity_.push_back(Tensor::zeros_like(*p));
    }

    // Sums per-sample gradients in slot order, averages and applies one step.
    void step(const std::vector<std::vector<Tensor>>& per_sample) {
        const float inv = 1.0f / static_cast<float>(per_sample.size());
        for (std::size_t p = 0; p < params_.size(); ++p) {
            Tensor g = per_sample[0][p];
            for (std::size_t s = 1; s < per_sample.size(); ++s) g += per_sample[s][p];
            g *= inv;
            float* v = velocity_[p].data();
            float* w = params_[p]->data();
            const float mu = static_cast<float>(mu_), lr = static_cast<float>(lr_);
            for (std::size_t k = 0; k < g.numel(); ++k) {
                v[k] = mu * v[k] + g[k];
                w[k] -= lr * v[k];
            }
        }
    }

private:
    std::vector<Tensor*> params_;
    std::vector<Tensor> velocity_;
    double lr_, mu_;
};

std::vector<std::size_t> epoch_order(std::size_t n, const TrainOpts& opts, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (opts.shuffle) {
        Rng rng = Rng::stream(opts.seed, 0x5EED0000ULL + epoch);
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    }
    return order;
}

struct SampleStats {
    double loss = 0.0;
    bool correct = false;
};

SampleStats classify(std::span<const Layer> layers, const Tensor& image, std::size_t label) {
    Tensor logits = forward(layers, as_batch(image));
    logits = logits.reshaped({logits.numel()});
    return {softmax_cross_entropy(logits, label).loss, argmax(logits) == label};
}

EvalResult eval_layers(std::span<const Layer> layers, const Dataset& data, std::size_t workers) {
    std::vector<SampleStats> stats(data.size());
    parallel_for(data.size(), [&](std::size_t i) { stats[i] = classify(layers, data.image(i), data.labels[i]); }, workers);
    double loss = 0.0, correct = 0.0;
    for (const auto& s : stats) {
        loss += s.loss;
        correct += s.correct ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(data.size());
    return {{correct / n}, {loss / n}};
}

// Encoder outputs e_0 .. e_N of one sweep (e_0 = input).
std::vector<Tensor> sweep(const PCNetwork& net, const Tensor& image) {
    std::vector<Tensor> e{as_batch(image)};
    for (std::size_t i = 0; i < net.size(); ++i) e.push_back(net.encode(i, e[i]));
    return e;
}

double reconstruction_loss(const PCNetwork& net, const std::vector<std::vector<Layer>>& decoders, const Tensor& image) {
    const auto e = sweep(net, image);
    double loss = 0.0;
    for (std::size_t i = 0; i < decoders.size(); ++i) loss += sum_squares(e[i] - forward(decoders[i], e[i + 1]));
    return loss;
}

double mean_reconstruction_loss(const PCNetwork& net, const std::vector<std::vector<Layer>>& decoders,
                                const Dataset& data, std::size_t workers) {
    std::vector<double> losses(data.size());
    parallel_for(data.size(), [&](std::size_t i) { losses[i] = reconstruction_loss(net, decoders, data.image(i)); }, workers);
    double total = 0.0;
    for (double l : losses) total += l;
    return total / static_cast<double>(data.size());
}

void check_finite(double loss, std::size_t epoch, std::size_t batch, const char* what) {
    if (!std::isfinite(loss))
        throw DivergenceError(fmt::format("{} diverged: loss {} at epoch {}, batch {}; lower the learning rate", what,
                                          loss, epoch, batch));
}

}  // namespace

TrainResult train_backbone(const NetworkSpec& spec, const Dataset& train, const TrainOpts& opts, const Dataset* test) {
    opts.validate();
    train.validate();
    const PCNetwork init = build_network(spec, {}, opts.seed);
    if (train.class_count > init.class_count())
        throw ValidationError(fmt::format("dataset has {} classes but the head has {}", train.class_count, init.class_count()));
    if (train.image_shape() != spec.backbone.input_size)
        throw ShapeError("dataset images " + shape_str(train.image_shape()) + " do not match input_size " +
                         shape_str(spec.backbone.input_size));
    std::vector<Layer> layers = init.backbone_layers();
    Sgd sgd(collect_params(layers), opts.learning_rate, opts.momentum);
    TrainResult result;
    if (test) {
        auto r = eval_layers(layers, *test, opts.workers);
        result.log.push_back({0, "test", r.mean_ce[0], r.accuracy[0]});
    }

    for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
        const auto order = epoch_order(train.size(), opts, epoch);
        double epoch_loss = 0.0, epoch_correct = 0.0;
        for (std::size_t start = 0, batch = 0; start < order.size(); start += opts.batch_size, ++batch) {
            const std::size_t b = std::min(opts.batch_size, order.size() - start);
            std::vector<std::vector<Tensor>> grads(b);
            std::vector<SampleStats> stats(b);
            parallel_for(b, [&](std::size_t k) {
                const std::size_t idx = order[start + k];
                SequenceTrace trace;
                Tensor logits = forward(layers, as_batch(train.image(idx)), &trace);
                const auto lg = softmax_cross_entropy(logits.reshaped({logits.numel()}), train.labels[idx]);
                stats[k] = {lg.loss, argmax(logits) == train.labels[idx]};
                std::vector<ParamGrad> pg;
                backward(layers, trace, lg.grad.reshaped(logits.shape()), &pg);
                append_grads(layers, pg, grads[k]);
            }, opts.workers);
            double batch_loss = 0.0;
            for (const auto& s : stats) {
                batch_loss += s.loss;
                epoch_correct += s.correct ? 1.0 : 0.0;
            }
            check_finite(batch_loss, epoch, batch, "backbone training");
            epoch_loss += batch_loss;
            sgd.step(grads);
        }
        const double n = static_cast<double>(train.size());
        result.log.push_back({epoch, "train", epoch_loss / n, epoch_correct / n});
        if (test) {
            auto r = eval_layers(layers, *test, opts.workers);
            result.log.push_back({epoch, "test", r.mean_ce[0], r.accuracy[0]});
        }
    }

    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (!layers[i].desc.has_params()) continue;
        result.weights[backbone_param_name(i, false)] = layers[i].params.kernel;
        result.weights[backbone_param_name(i, true)] = layers[i].params.bias;
    }
    return result;
}

double feedback_loss(const PCNetwork& net, const Tensor& image) {
    std::vector<std::vector<Layer>> decoders;
    for (const auto& pc : net.pcoders()) decoders.push_back(pc.decoder);
    return reconstruction_loss(net, decoders, image);
}

double feedback_loss(const PCNetwork& net, const Dataset& data, std::size_t workers) {
    std::vector<std::vector<Layer>> decoders;
    for (const auto& pc : net.pcoders()) decoders.push_back(pc.decoder);
    return mean_reconstruction_loss(net, decoders, data, workers);
}

TrainResult train_feedback(const PCNetwork& net, const Dataset& train, const TrainOpts& opts, const Dataset* test) {
    opts.validate();
    train.validate();
    if (!net.backbone_frozen())
        throw ValidationError("train_feedback needs a trained, frozen backbone; this network's backbone was freshly initialized");
    if (train.image_shape() != net.spec().backbone.input_size)
        throw ShapeError("dataset images " + shape_str(train.image_shape()) + " do not match input_size " +
                         shape_str(net.spec().backbone.input_size));

    std::vector<std::vector<Layer>> decoders;
    std::vector<Tensor*> params;
    for (const auto& pc : net.pcoders()) decoders.push_back(pc.decoder);
    for (auto& d : decoders)
        for (auto* p : collect_params(d)) params.push_back(p);
    Sgd sgd(params, opts.learning_rate, opts.momentum);

    TrainResult result;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (test) result.log.push_back({0, "test", mean_reconstruction_loss(net, decoders, *test, opts.workers), nan});

    for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
        const auto order = epoch_order(train.size(), opts, epoch);
        double epoch_loss = 0.0;
        for (std::size_t start = 0, batch = 0; start < order.size(); start += opts.batch_size, ++batch) {
            const std::size_t b = std::min(opts.batch_size, order.size() - start);
            std::vector<std::vector<Tensor>> grads(b);
            std::vector<double> losses(b);
            parallel_for(b, [&](std::size_t k) {
                const auto e = sweep(net, train.image(order[start + k]));
                double loss = 0.0;
                for (std::size_t i = 0; i < decoders.size(); ++i) {
                    SequenceTrace trace;
                    Tensor r = forward(decoders[i], e[i + 1], &trace) - e[i];
                    loss += sum_squares(r);
                    std::vector<ParamGrad> pg;
                    // Targets are constants: only the decoder's parameters receive gradient.
                    backward(decoders[i], trace, r * 2.0f, &pg);
                    append_grads(decoders[i], pg, grads[k]);
                }
                losses[k] = loss;
            }, opts.workers);
            double batch_loss = 0.0;
            for (double l : losses) batch_loss += l;
            check_finite(batch_loss, epoch, batch, "feedback training");
            epoch_loss += batch_loss;
            sgd.step(grads);
        }
        result.log.push_back({epoch, "train", epoch_loss / static_cast<double>(train.size()), nan});
        if (test) result.log.push_back({epoch, "test", mean_reconstruction_loss(net, decoders, *test, opts.workers), nan});
    }

    for (std::size_t i = 0; i < decoders.size(); ++i)
        for (std::size_t j = 0; j < decoders[i].size(); ++j) {
            const Layer& l = decoders[i][j];
            if (!l.desc.has_params()) continue;
            result.weights[decoder_param_name(i, j, false)] = l.params.kernel;
            result.weights[decoder_param_name(i, j, true)] = l.params.bias;
        }
    return result;
}

EvalResult evaluate(const PCNetwork& net, const Dataset& data, std::size_t timesteps, std::size_t workers) {
    std::vector<std::vector<SampleStats>> stats(data.size());
    parallel_for(data.size(), [&](std::size_t i) {
        for (const auto& o : run_dynamics(net, data.image(i), timesteps))
            stats[i].push_back({softmax_cross_entropy(o.logits, data.labels[i]).loss, argmax(o.logits) == data.labels[i]});
    }, workers);
    EvalResult r;
    const double n = static_cast<double>(data.size());
    for (std::size_t t = 0; t <= timesteps; ++t) {
        double loss = 0.0, correct = 0.0;
        for (const auto& s : stats) {
            loss += s[t].loss;
            correct += s[t].correct ? 1.0 : 0.0;
        }
        r.accuracy.push_back(correct / n);
        r.mean_ce.push_back(loss / n);
    }
    return r;
}

EvalResult evaluate_backbone(const PCNetwork& net, const Dataset& data, std::size_t workers) {
    return eval_layers(net.backbone_layers(), data, workers);
}

std::string train_log_csv(const std::vector<TrainLogRow>& log) {
    std::string out = "epoch,split,loss,accuracy\n";
    for (const auto& r : log)
        out += fmt::format("{},{},{},{}\n", r.epoch, r.split, r.loss, std::isnan(r.accuracy) ? std::string() : fmt::format("{}", r.accuracy));
    return out;
}

}  // namespace pcnet
