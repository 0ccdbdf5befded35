#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "ctan/backbone.hpp"
#include "ctan/data.hpp"
#include "ctan/sgd.hpp"

namespace cta {

/// Two-stage schedule: stage 1 trains with the reversal coefficient pinned at
/// 0, stage 2 ramps it toward 1 while the learning rate drops.
struct TrainConfig {
    int batch_size = 16;
    double lr_stage1 = 1e-2;
    double lr_stage2 = 1e-3;
    int stage1_epochs = 10;
    int stage2_epochs = 20;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::uint64_t seed = 42;
    double lambda_gamma = 10.0;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

/// Realized losses of one step. `total` is the extractor's effective
/// objective, l_task - lambda_v * l_domain.
struct LossBreakdown {
    double l_task = 0.0;
    double l_domain = 0.0;
    double lambda_v = 0.0;
    double total = 0.0;
};

/// lambda(p) = 2 / (1 + exp(-gamma p)) - 1; zero at p = 0, monotone, and
/// within 1e-4 of 1 at p = 1 for gamma = 10.
GrlCoefficient lambda_schedule(double progress, double gamma);

struct Batch {
    Tensor videos;                     // (B, T, C, H, W)
    std::vector<std::int64_t> labels;  // empty for unlabeled target batches
};

/// Test hook: the logits realized inside a train step.
struct StepTrace {
    Tensor action_logits;
    Tensor domain_logits;
};

/// One forward/backward/update: classification loss on the source batch,
/// domain loss on both batches through the reversal layer, a single backward
/// sweep and one optimizer step. Target labels are never read.
LossBreakdown train_step(ModelBundle& bundle, const Batch& source, const Batch& target,
                         GrlCoefficient coeff, SgdOptimizer<float>& opt, Rng& dropout_rng,
                         StepTrace* trace = nullptr);

struct EpochMetrics {
    int epoch = 0;  // 1-based, global across stages
    int stage = 0;
    double lambda = 0.0;    // coefficient of the epoch's final step
    double l_task = 0.0;    // mean over the epoch's steps
    double l_domain = 0.0;  // mean over the epoch's steps
    double source_acc = 0.0;
    double target_val_acc = 0.0;
};
using MetricsLog = std::vector<EpochMetrics>;

using StageCallback = std::function<void(int stage, const ModelBundle&)>;

/// Runs the full two-stage schedule. Stage-2 progress is measured within
/// stage 2 only, so the ramp starts at exactly 0. The callback fires after
/// each stage that ran at least one epoch.
MetricsLog train(ModelBundle& bundle, const ClipDataset& source_train,
                 const ClipDataset& target_train, const ClipDataset& target_val,
                 const TrainConfig& config, const PreprocessConfig& prep,
                 const StageCallback& on_stage_end = {});

/// Fraction of segments whose argmax class (eval mode, ties to the lowest
/// index) matches the label.
double evaluate(const ModelBundle& bundle, const ClipDataset& dataset,
                const PreprocessConfig& prep, int batch_size = 16);

/// Comma-separated metrics: header
/// `epoch,stage,lambda,l_task,l_domain,source_acc,target_val_acc`, reals with
/// six decimals.
void write_metrics(const std::filesystem::path& path, const MetricsLog& log);

/// Stacks preprocessed clips of the given dataset indices into a batch.
Batch assemble_batch(const ClipDataset& dataset, const std::vector<std::size_t>& indices,
                     const PreprocessConfig& prep, bool train_mode, Rng* crop_rng,
                     bool with_labels);

}  // namespace cta
