#include "ctan/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace cta {

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be at least 1");
    if (stage1_epochs < 0 || stage2_epochs < 0) {
        throw std::invalid_argument("train: epoch counts must be nonnegative");
    }
    if (!(lr_stage1 > 0.0) || !(lr_stage2 > 0.0)) {
        throw std::invalid_argument("train: learning rates must be positive");
    }
    if (!(lambda_gamma > 0.0)) throw std::invalid_argument("train: lambda gamma must be positive");
    if (momentum < 0.0 || weight_decay < 0.0) {
        throw std::invalid_argument("train: momentum and weight decay must be nonnegative");
    }
}

GrlCoefficient lambda_schedule(double progress, double gamma) {
    if (!(progress >= 0.0 && progress <= 1.0)) {
        throw std::invalid_argument("lambda_schedule: progress must lie in [0, 1]");
    }
    return GrlCoefficient(2.0 / (1.0 + std::exp(-gamma * progress)) - 1.0);
}

Batch assemble_batch(const ClipDataset& dataset, const std::vector<std::size_t>& indices,
                     const PreprocessConfig& prep, bool train_mode, Rng* crop_rng,
                     bool with_labels) {
    if (indices.empty()) throw std::invalid_argument("assemble_batch: empty index list");
    Rng idle(0);
    std::vector<float> stacked;
    Shape sample_shape;
    Batch batch;
    for (const auto idx : indices) {
        const auto& s = dataset.samples.at(idx);
        auto clip = preprocess_clip(s.frames, prep, train_mode, crop_rng ? *crop_rng : idle);
        if (sample_shape.empty()) {
            sample_shape = clip.shape();
            stacked.reserve(indices.size() * clip.values().size());
        } else if (clip.shape() != sample_shape) {
            throw std::invalid_argument("assemble_batch: inconsistent clip shapes");
        }
        stacked.insert(stacked.end(), clip.values().begin(), clip.values().end());
        if (with_labels) batch.labels.push_back(s.record.label);
    }
    Shape batch_shape = sample_shape;
    batch_shape[0] = static_cast<std::int64_t>(indices.size());
    batch.videos = Tensor::from_values(std::move(batch_shape), std::move(stacked));
    return batch;
}

LossBreakdown train_step(ModelBundle& bundle, const Batch& source, const Batch& target,
                         GrlCoefficient coeff, SgdOptimizer<float>& opt, Rng& dropout_rng,
                         StepTrace* trace) {
    if (!source.videos.defined() || !target.videos.defined()) {
        throw std::invalid_argument("train_step: batches must be nonempty");
    }
    const std::int64_t n_src = source.videos.extent(0);
    const std::int64_t n_tgt = target.videos.extent(0);
    if (static_cast<std::int64_t>(source.labels.size()) != n_src) {
        throw std::invalid_argument("train_step: source labels must match the batch");
    }
    for (const auto y : source.labels) {
        if (y < 0 || y >= bundle.num_classes) {
            throw std::invalid_argument("train_step: label out of range");
        }
    }

    Tape tape;
    auto features_src = extract_features(tape, source.videos, bundle, true);
    auto features_tgt = extract_features(tape, target.videos, bundle, true);

    auto action_logits = classify_action(tape, features_src, bundle, true, &dropout_rng);
    auto l_task = softmax_cross_entropy(tape, action_logits, source.labels);

    auto features_all = concat_rows(tape, features_src, features_tgt);
    auto domain_logits = discriminate_domain(tape, features_all, bundle, coeff);
    std::vector<std::int64_t> domain_labels(static_cast<std::size_t>(n_src), 1);
    domain_labels.insert(domain_labels.end(), static_cast<std::size_t>(n_tgt), 0);
    auto l_domain = softmax_cross_entropy(tape, domain_logits, domain_labels);

    LossBreakdown out;
    out.l_task = static_cast<double>(l_task.item());
    out.l_domain = static_cast<double>(l_domain.item());
    out.lambda_v = coeff.lambda;
    out.total = out.l_task - coeff.lambda * out.l_domain;
    if (!std::isfinite(out.l_task) || !std::isfinite(out.l_domain)) {
        throw std::runtime_error("train_step: non-finite loss (l_task=" +
                                 std::to_string(out.l_task) +
                                 ", l_domain=" + std::to_string(out.l_domain) + "); aborting run");
    }

    auto recorded_total = add(tape, l_task, l_domain);
    tape.backward(recorded_total);
    auto params = bundle.parameters();
    opt.step(params);

    if (trace) *trace = {action_logits, domain_logits};
    return out;
}

namespace {

/// Infinite shuffled cycle over dataset indices; reshuffles on wrap.
class IndexStream {
public:
    IndexStream(std::size_t n, Rng rng) : rng_(rng), order_(n) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        shuffle(order_, rng_);
    }

    std::vector<std::size_t> next(std::size_t count) {
        std::vector<std::size_t> out;
        out.reserve(count);
        while (out.size() < count) {
            if (pos_ == order_.size()) {
                shuffle(order_, rng_);
                pos_ = 0;
            }
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

}  // namespace

MetricsLog train(ModelBundle& bundle, const ClipDataset& source_train,
                 const ClipDataset& target_train, const ClipDataset& target_val,
                 const TrainConfig& config, const PreprocessConfig& prep,
                 const StageCallback& on_stage_end) {
    config.validate();
    if (source_train.empty() || target_train.empty() || target_val.empty()) {
        throw std::invalid_argument("train: source-train, target-train and target-val must be nonempty");
    }

    Rng root(config.seed);
    auto shuffle_src = root.split("shuffle.source");
    auto crop_rng = root.split("crop");
    auto dropout_rng = root.split("dropout");
    IndexStream target_stream(target_train.size(), root.split("shuffle.target"));

    SgdOptimizer<float> opt(config.lr_stage1, config.momentum, config.weight_decay);

    const std::size_t n_src = source_train.size();
    const std::size_t batch = static_cast<std::size_t>(config.batch_size);
    const std::size_t steps_per_epoch = (n_src + batch - 1) / batch;
    const std::size_t stage2_total_steps =
        static_cast<std::size_t>(config.stage2_epochs) * steps_per_epoch;

    MetricsLog log;
    int global_epoch = 0;
    std::size_t stage2_step = 0;

    std::vector<std::size_t> source_order(n_src);
    std::iota(source_order.begin(), source_order.end(), std::size_t{0});

    for (int stage = 1; stage <= 2; ++stage) {
        const int epochs = stage == 1 ? config.stage1_epochs : config.stage2_epochs;
        if (stage == 2) opt.set_learning_rate(config.lr_stage2);
        for (int e = 0; e < epochs; ++e) {
            ++global_epoch;
            shuffle(source_order, shuffle_src);

            double task_sum = 0.0;
            double domain_sum = 0.0;
            double last_lambda = 0.0;
            std::size_t steps = 0;
            for (std::size_t offset = 0; offset < n_src; offset += batch) {
                GrlCoefficient coeff(0.0);
                if (stage == 2) {
                    const double progress = static_cast<double>(stage2_step) /
                                            static_cast<double>(stage2_total_steps);
                    coeff = lambda_schedule(progress, config.lambda_gamma);
                    ++stage2_step;
                }
                const std::size_t take = std::min(batch, n_src - offset);
                std::vector<std::size_t> chunk(source_order.begin() + offset,
                                               source_order.begin() + offset + take);
                auto source_batch = assemble_batch(source_train, chunk, prep, true, &crop_rng, true);
                auto target_batch = assemble_batch(target_train, target_stream.next(take), prep,
                                                   true, &crop_rng, false);
                const auto lb =
                    train_step(bundle, source_batch, target_batch, coeff, opt, dropout_rng);
                task_sum += lb.l_task;
                domain_sum += lb.l_domain;
                last_lambda = lb.lambda_v;
                ++steps;
            }

            EpochMetrics row;
            row.epoch = global_epoch;
            row.stage = stage;
            row.lambda = last_lambda;
            row.l_task = task_sum / static_cast<double>(steps);
            row.l_domain = domain_sum / static_cast<double>(steps);
            row.source_acc = evaluate(bundle, source_train, prep, config.batch_size);
            row.target_val_acc = evaluate(bundle, target_val, prep, config.batch_size);
            log.push_back(row);
        }
        if (epochs > 0 && on_stage_end) on_stage_end(stage, bundle);
    }
    return log;
}

double evaluate(const ModelBundle& bundle, const ClipDataset& dataset,
                const PreprocessConfig& prep, int batch_size) {
    if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
    if (batch_size < 1) throw std::invalid_argument("evaluate: batch size must be positive");

    std::size_t correct = 0;
    const std::size_t n = dataset.size();
    for (std::size_t offset = 0; offset < n; offset += static_cast<std::size_t>(batch_size)) {
        const std::size_t take = std::min(static_cast<std::size_t>(batch_size), n - offset);
        std::vector<std::size_t> chunk(take);
        std::iota(chunk.begin(), chunk.end(), offset);
        auto batch = assemble_batch(dataset, chunk, prep, false, nullptr, true);

        Tape tape;
        tape.set_recording(false);
        auto features = extract_features(tape, batch.videos, bundle, false);
        auto logits = classify_action(tape, features, bundle, false);
        const auto lv = logits.values();
        const std::int64_t k = logits.extent(1);
        for (std::size_t i = 0; i < take; ++i) {
            const float* row = lv.data() + static_cast<std::int64_t>(i) * k;
            std::int64_t best = 0;
            for (std::int64_t j = 1; j < k; ++j) {
                if (row[j] > row[best]) best = j;  // ties break to the lowest index
            }
            if (best == batch.labels[i]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

void write_metrics(const std::filesystem::path& path, const MetricsLog& log) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("metrics: cannot write " + path.string());
    out << "epoch,stage,lambda,l_task,l_domain,source_acc,target_val_acc\n";
    char line[256];
    for (const auto& r : log) {
        std::snprintf(line, sizeof(line), "%d,%d,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.epoch, r.stage,
                      r.lambda, r.l_task, r.l_domain, r.source_acc, r.target_val_acc);
        out << line;
    }
}

}  // namespace cta
