#include "ctan/ablation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace cta {

DataBundle prepare_data(const RunConfig& config) {
    DataBundle out;
    if (config.use_synthetic) {
        auto data = generate_synthetic(config.synthetic);
        out.class_names = data.class_names;
        out.source_train = std::move(data.source.train);
        out.source_val = std::move(data.source.val);
        out.source_test = std::move(data.source.test);
        out.target_train = std::move(data.target.train);
        out.target_val = std::move(data.target.val);
        out.target_test = std::move(data.target.test);
    } else {
        out.source_train = load_clip_dataset(config.data_dir / "source_train.csv");
        out.source_val = load_clip_dataset(config.data_dir / "source_val.csv");
        out.source_test = load_clip_dataset(config.data_dir / "source_test.csv");
        out.target_train = load_clip_dataset(config.data_dir / "target_train.csv");
        out.target_val = load_clip_dataset(config.data_dir / "target_val.csv");
        out.target_test = load_clip_dataset(config.data_dir / "target_test.csv");
        out.class_names = out.source_train.class_names;
    }
    return out;
}

std::vector<AblationMethod> standard_ablation_methods() {
    return {
        {"source-only", false, false, BlockVariant::CT},
        {"dann", true, false, BlockVariant::CT},
        {"cta-C", true, true, BlockVariant::C},
        {"cta-T", true, true, BlockVariant::T},
        {"cta-TC", true, true, BlockVariant::TC},
        {"cta-CT", true, true, BlockVariant::CT},
    };
}

double run_method(const RunConfig& config, const DataBundle& data, const AblationMethod& method,
                  std::uint64_t seed) {
    BackboneConfig backbone = config.backbone;
    backbone.variant = method.variant;
    if (!method.use_cta) backbone.cta_after.clear();

    TrainConfig tc = config.train;
    tc.seed = seed;
    if (!method.adversarial) tc.stage2_epochs = 0;

    auto bundle = init_model<float>(backbone, static_cast<std::int64_t>(data.class_names.size()),
                                    seed);
    train(bundle, data.source_train, data.target_train, data.target_val, tc, config.preprocess);
    return evaluate(bundle, data.target_test, config.preprocess, tc.batch_size);
}

std::vector<MethodResult> run_ablation(const RunConfig& config, const DataBundle& data,
                                       std::span<const AblationMethod> methods,
                                       std::span<const std::uint64_t> seeds) {
    std::vector<MethodResult> results;
    for (const auto& method : methods) {
        MethodResult row;
        row.name = method.name;
        for (const auto seed : seeds) {
            row.accuracies.push_back(run_method(config, data, method, seed));
        }
        row.mean = std::accumulate(row.accuracies.begin(), row.accuracies.end(), 0.0) /
                   static_cast<double>(row.accuracies.size());
        results.push_back(std::move(row));
    }
    const auto source_row =
        std::find_if(results.begin(), results.end(),
                     [](const MethodResult& r) { return r.name == "source-only"; });
    const double baseline = source_row != results.end() ? source_row->mean : results.front().mean;
    for (auto& r : results) r.gain = r.mean - baseline;
    return results;
}

std::vector<std::uint64_t> ablation_seeds(const RunConfig& config) {
    return {config.seed, config.seed + 1, config.seed + 2};
}

std::string format_ablation_table(const std::vector<MethodResult>& results) {
    std::ostringstream out;
    std::size_t n_seeds = results.empty() ? 0 : results.front().accuracies.size();
    out << "method       ";
    for (std::size_t i = 0; i < n_seeds; ++i) out << "  seed" << i << "  ";
    out << "   mean     gain\n";
    char buf[64];
    for (const auto& r : results) {
        std::snprintf(buf, sizeof(buf), "%-12s ", r.name.c_str());
        out << buf;
        for (const auto a : r.accuracies) {
            std::snprintf(buf, sizeof(buf), " %6.4f ", a);
            out << buf;
        }
        std::snprintf(buf, sizeof(buf), " %6.4f  %+7.4f\n", r.mean, r.gain);
        out << buf;
    }
    return out.str();
}

void write_ablation_csv(const std::filesystem::path& path,
                        const std::vector<MethodResult>& results) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("ablation: cannot write " + path.string());
    std::size_t n_seeds = results.empty() ? 0 : results.front().accuracies.size();
    out << "method";
    for (std::size_t i = 0; i < n_seeds; ++i) out << ",acc_seed" << i;
    out << ",mean,gain\n";
    char buf[32];
    for (const auto& r : results) {
        out << r.name;
        for (const auto a : r.accuracies) {
            std::snprintf(buf, sizeof(buf), ",%.6f", a);
            out << buf;
        }
        std::snprintf(buf, sizeof(buf), ",%.6f,%.6f\n", r.mean, r.gain);
        out << buf;
    }
}

}  // namespace cta
