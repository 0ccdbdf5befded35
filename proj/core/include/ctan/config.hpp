#pragma once

#include <filesystem>
#include <string>

#include "ctan/backbone.hpp"
#include "ctan/data.hpp"
#include "ctan/trainer.hpp"

namespace cta {

/// Raised for malformed configuration text or inconsistent run settings; the
/// command line maps it to a user-error exit code.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// A full run: model geometry, schedule, data source and output location.
/// Exactly one data source is active: the synthetic generator or a manifest
/// directory.
struct RunConfig {
    std::uint64_t seed = 42;
    std::filesystem::path output_dir = "runs/default";
    BlockVariant variant = BlockVariant::CT;
    BackboneConfig backbone = BackboneConfig::desk_default();
    TrainConfig train;
    PreprocessConfig preprocess;
    bool use_synthetic = true;
    std::filesystem::path data_dir;  // manifest directory when !use_synthetic
    SyntheticConfig synthetic;

    void validate(bool check_paths = true) const;
    bool operator==(const RunConfig&) const = default;
};

/// Parses the flat `key = value` format (see default_config_text()). Unknown
/// keys are errors.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Emits a file that parses back to an equal RunConfig.
std::string serialize_run_config(const RunConfig& config);

/// The commented default configuration written by `init-config`.
std::string default_config_text();

}  // namespace cta
