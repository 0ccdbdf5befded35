#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ctan/ablation.hpp"
#include "ctan/config.hpp"
#include "ctan/gradcheck.hpp"
#include "ctan/tensor_io.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUserError = 1;
constexpr int kExitInternalError = 2;

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    bool source_only = false;
};

cta::RunConfig load_config(const CommonFlags& flags) {
    auto cfg = cta::load_run_config(flags.config_path);
    if (flags.seed) {
        cfg.seed = *flags.seed;
        cfg.train.seed = *flags.seed;
    }
    if (flags.out) cfg.output_dir = *flags.out;
    if (flags.source_only) cfg.train.stage2_epochs = 0;
    cfg.validate();
    return cfg;
}

int cmd_init_config(const std::string& out_path) {
    std::ofstream out(out_path);
    if (!out) throw cta::ConfigError("cannot write " + out_path);
    out << cta::default_config_text();
    std::cout << "wrote " << out_path << "\n";
    return kExitOk;
}

void print_dataset_counts(const cta::DataBundle& data) {
    const auto count_by_class = [&](const cta::ClipDataset& ds) {
        std::vector<std::size_t> counts(data.class_names.size(), 0);
        for (const auto& s : ds.samples) counts[static_cast<std::size_t>(s.record.label)]++;
        return counts;
    };
    const auto print_row = [&](const char* domain, const char* split,
                               const cta::ClipDataset& ds) {
        std::printf("%-8s %-6s %6zu ", domain, split, ds.size());
        for (const auto c : count_by_class(ds)) std::printf(" %5zu", c);
        std::printf("\n");
    };
    std::printf("%-8s %-6s %6s ", "domain", "split", "total");
    for (const auto& name : data.class_names) std::printf(" %5s", name.substr(0, 5).c_str());
    std::printf("\n");
    print_row("source", "train", data.source_train);
    print_row("source", "val", data.source_val);
    print_row("source", "test", data.source_test);
    print_row("target", "train", data.target_train);
    print_row("target", "val", data.target_val);
    print_row("target", "test", data.target_test);
}

int cmd_synth_data(const CommonFlags& flags) {
    auto cfg = cta::load_run_config(flags.config_path);
    if (flags.seed) cfg.synthetic.seed = *flags.seed;
    if (!cfg.use_synthetic) {
        throw cta::ConfigError("synth-data needs data.source = synthetic");
    }
    cfg.synthetic.validate();
    const fs::path dir = flags.out ? fs::path(*flags.out) : cfg.output_dir / "data";

    const auto data = cta::generate_synthetic(cfg.synthetic);
    cta::save_synthetic_dataset(data, dir);

    // Recount what actually landed on disk.
    cta::RunConfig reload = cfg;
    reload.use_synthetic = false;
    reload.data_dir = dir;
    const auto bundle = cta::prepare_data(reload);
    print_dataset_counts(bundle);
    std::cout << "dataset written to " << dir.string() << "\n";
    return kExitOk;
}

int cmd_train(const CommonFlags& flags) {
    const auto cfg = load_config(flags);
    fs::create_directories(cfg.output_dir);

    const auto data = cta::prepare_data(cfg);
    auto bundle = cta::init_model<float>(cfg.backbone,
                                          static_cast<std::int64_t>(data.class_names.size()),
                                          cfg.seed);
    const auto metrics = cta::train(
        bundle, data.source_train, data.target_train, data.target_val, cfg.train, cfg.preprocess,
        [&](int stage, const cta::ModelBundle& m) {
            cta::save_checkpoint(cfg.output_dir / ("stage" + std::to_string(stage) + ".ckpt"), m);
        });
    cta::write_metrics(cfg.output_dir / "metrics.csv", metrics);

    if (!metrics.empty()) {
        const auto& last = metrics.back();
        std::printf("epochs=%d source_acc=%.4f target_val_acc=%.4f\n", last.epoch,
                    last.source_acc, last.target_val_acc);
    }
    std::cout << "artifacts in " << cfg.output_dir.string() << "\n";
    return kExitOk;
}

int cmd_eval(const CommonFlags& flags, const std::string& checkpoint,
             const std::string& manifest) {
    const auto cfg = load_config(flags);
    const auto dataset = cta::load_clip_dataset(manifest);
    auto bundle = cta::init_model<float>(cfg.backbone,
                                          static_cast<std::int64_t>(dataset.class_names.size()),
                                          cfg.seed);
    cta::load_checkpoint(checkpoint, bundle);
    const double acc = cta::evaluate(bundle, dataset, cfg.preprocess, cfg.train.batch_size);
    std::printf("accuracy=%.4f\n", acc);
    return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed) {
    const auto reports = cta::run_gradcheck_suite(seed);
    bool all_pass = true;
    std::printf("%-24s %-14s %s\n", "op", "max_rel_err", "status");
    for (const auto& r : reports) {
        std::printf("%-24s %-14.3e %s\n", r.name.c_str(), r.max_rel_err,
                    r.pass ? "pass" : "FAIL");
        all_pass = all_pass && r.pass;
    }
    return all_pass ? kExitOk : kExitInternalError;
}

int cmd_ablate(const CommonFlags& flags) {
    const auto cfg = load_config(flags);
    fs::create_directories(cfg.output_dir);

    const auto data = cta::prepare_data(cfg);
    const auto methods = cta::standard_ablation_methods();
    const auto seeds = cta::ablation_seeds(cfg);
    const auto results = cta::run_ablation(cfg, data, methods, seeds);

    const auto table = cta::format_ablation_table(results);
    std::cout << table;
    cta::write_ablation_csv(cfg.output_dir / "ablation.csv", results);
    std::cout << "table written to " << (cfg.output_dir / "ablation.csv").string() << "\n";
    return kExitOk;
}

int cmd_export_embeddings(const CommonFlags& flags, const std::string& checkpoint,
                          const std::string& manifest) {
    const auto cfg = load_config(flags);
    const auto dataset = cta::load_clip_dataset(manifest);
    auto bundle = cta::init_model<float>(cfg.backbone,
                                          static_cast<std::int64_t>(dataset.class_names.size()),
                                          cfg.seed);
    cta::load_checkpoint(checkpoint, bundle);

    fs::create_directories(cfg.output_dir);
    const fs::path out_path = cfg.output_dir / "embeddings.csv";
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write " + out_path.string());

    const int batch = cfg.train.batch_size;
    const std::size_t n = dataset.size();
    char buf[32];
    for (std::size_t offset = 0; offset < n; offset += static_cast<std::size_t>(batch)) {
        const std::size_t take = std::min(static_cast<std::size_t>(batch), n - offset);
        std::vector<std::size_t> chunk(take);
        for (std::size_t i = 0; i < take; ++i) chunk[i] = offset + i;
        const auto b = cta::assemble_batch(dataset, chunk, cfg.preprocess, false, nullptr, false);
        cta::Tape tape;
        tape.set_recording(false);
        const auto features = cta::extract_features(tape, b.videos, bundle, false);
        const auto fv = features.values();
        const std::int64_t d = features.extent(1);
        for (std::size_t i = 0; i < take; ++i) {
            const auto& rec = dataset.samples[offset + i].record;
            for (std::int64_t j = 0; j < d; ++j) {
                std::snprintf(buf, sizeof(buf), "%.6f,", fv[static_cast<std::int64_t>(i) * d + j]);
                out << buf;
            }
            out << dataset.class_names[static_cast<std::size_t>(rec.label)] << ","
                << to_string(rec.domain) << "\n";
        }
    }
    std::cout << "wrote " << n << " rows to " << out_path.string() << "\n";
    return kExitOk;
}

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required = true) {
    auto* opt = cmd->add_option("--config", flags.config_path, "run configuration file");
    if (config_required) opt->required();
    cmd->add_option("--seed", flags.seed, "override the run seed");
    cmd->add_option("--out", flags.out, "override the output directory");
    cmd->add_flag("--source-only", flags.source_only, "skip stage 2 (no adversarial training)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"channel-temporal attention network: synthetic benchmark, training and analysis"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string init_out = "ctan.ini";
    std::string checkpoint, manifest;
    std::uint64_t gradcheck_seed = 12345;

    auto* init_cmd = app.add_subcommand("init-config", "write a commented default configuration");
    init_cmd->add_option("--out", init_out, "destination file");

    auto* synth_cmd = app.add_subcommand("synth-data", "generate the synthetic dataset on disk");
    add_common(synth_cmd, flags);

    auto* train_cmd = app.add_subcommand("train", "run the two-stage schedule");
    add_common(train_cmd, flags);

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
    add_common(eval_cmd, flags);
    eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    eval_cmd->add_option("--manifest", manifest, "segment manifest")->required();

    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every op");
    grad_cmd->add_option("--seed", gradcheck_seed, "seed for the probe tensors");

    auto* ablate_cmd = app.add_subcommand("ablate", "compare blocks over three seeds");
    add_common(ablate_cmd, flags);

    auto* export_cmd = app.add_subcommand("export-embeddings", "dump extractor features as CSV");
    add_common(export_cmd, flags);
    export_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    export_cmd->add_option("--manifest", manifest, "segment manifest")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (init_cmd->parsed()) return cmd_init_config(init_out);
        if (synth_cmd->parsed()) return cmd_synth_data(flags);
        if (train_cmd->parsed()) return cmd_train(flags);
        if (eval_cmd->parsed()) return cmd_eval(flags, checkpoint, manifest);
        if (grad_cmd->parsed()) return cmd_gradcheck(gradcheck_seed);
        if (ablate_cmd->parsed()) return cmd_ablate(flags);
        if (export_cmd->parsed()) return cmd_export_embeddings(flags, checkpoint, manifest);
    } catch (const cta::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUserError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUserError;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUserError;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternalError;
    }
    return kExitUserError;
}
