#pragma once

#include <span>
#include <string>
#include <vector>

#include "ctan/config.hpp"

namespace cta {

/// The six datasets a run consumes.
struct DataBundle {
    ClipDataset source_train, source_val, source_test;
    ClipDataset target_train, target_val, target_test;
    std::vector<std::string> class_names;
};

/// Generates the synthetic benchmark or loads the manifest directory named by
/// the config. The result depends only on the data configuration, never on
/// the run seed.
DataBundle prepare_data(const RunConfig& config);

/// One row of the block-comparison study. `adversarial` = run stage 2;
/// `use_cta` = keep the configured attention insertion points.
struct AblationMethod {
    std::string name;
    bool adversarial = true;
    bool use_cta = true;
    BlockVariant variant = BlockVariant::CT;
};

/// source-only, adversarial-no-attention, then the C/T/TC/CT blocks.
std::vector<AblationMethod> standard_ablation_methods();

struct MethodResult {
    std::string name;
    std::vector<double> accuracies;  // one per seed
    double mean = 0.0;
    double gain = 0.0;  // versus the source-only row
};

/// Builds, trains and evaluates one method at one seed; returns target-test
/// accuracy. Shared layers initialize identically across methods at a fixed
/// seed, so differences isolate the block.
double run_method(const RunConfig& config, const DataBundle& data, const AblationMethod& method,
                  std::uint64_t seed);

/// Trains every method at every seed against one shared data bundle.
std::vector<MethodResult> run_ablation(const RunConfig& config, const DataBundle& data,
                                       std::span<const AblationMethod> methods,
                                       std::span<const std::uint64_t> seeds);

/// The committed seed triple for a run config: seed, seed+1, seed+2.
std::vector<std::uint64_t> ablation_seeds(const RunConfig& config);

std::string format_ablation_table(const std::vector<MethodResult>& results);
void write_ablation_csv(const std::filesystem::path& path,
                        const std::vector<MethodResult>& results);

}  // namespace cta
