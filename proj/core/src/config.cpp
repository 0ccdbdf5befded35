#include "ctan/config.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace cta {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

/// Line-oriented `key = value` store; '#' starts a comment. Reads are
/// tracked so leftover keys can be reported as typos.
class KeyValueText {
public:
    explicit KeyValueText(const std::string& text) {
        std::istringstream in(text);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("config: expected `key = value` at line " +
                                  std::to_string(line_no));
            }
            const auto key = trim(line.substr(0, eq));
            const auto value = trim(line.substr(eq + 1));
            if (key.empty()) throw ConfigError("config: empty key at line " + std::to_string(line_no));
            if (!entries_.emplace(key, value).second) {
                throw ConfigError("config: duplicate key `" + key + "`");
            }
        }
    }

    bool has(const std::string& key) const { return entries_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) {
        const auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        read_.insert(key);
        return it->second;
    }

    std::int64_t get_int(const std::string& key, std::int64_t fallback) {
        const auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        read_.insert(key);
        try {
            std::size_t used = 0;
            const auto v = std::stoll(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config: `" + key + "` wants an integer, got `" + it->second + "`");
        }
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) {
        const auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        read_.insert(key);
        try {
            std::size_t used = 0;
            const auto v = std::stoull(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config: `" + key + "` wants an unsigned integer, got `" +
                              it->second + "`");
        }
    }

    double get_double(const std::string& key, double fallback) {
        const auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        read_.insert(key);
        try {
            std::size_t used = 0;
            const auto v = std::stod(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config: `" + key + "` wants a real number, got `" + it->second + "`");
        }
    }

    std::vector<std::int64_t> get_int_list(const std::string& key,
                                           std::vector<std::int64_t> fallback) {
        const auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        read_.insert(key);
        std::vector<std::int64_t> out;
        if (trim(it->second).empty()) return out;
        std::istringstream ss(it->second);
        std::string part;
        while (std::getline(ss, part, ',')) {
            try {
                out.push_back(std::stoll(trim(part)));
            } catch (const std::exception&) {
                throw ConfigError("config: `" + key + "` wants comma-separated integers");
            }
        }
        return out;
    }

    void fail_on_unread() const {
        for (const auto& [key, value] : entries_) {
            if (!read_.count(key)) throw ConfigError("config: unknown key `" + key + "`");
        }
    }

private:
    std::map<std::string, std::string> entries_;
    std::set<std::string> read_;
};

std::vector<std::int64_t> triple(KeyValueText& kv, const std::string& key, std::int64_t a,
                                 std::int64_t b, std::int64_t c) {
    auto v = kv.get_int_list(key, {a, b, c});
    if (v.size() == 1) v = {v[0], v[0], v[0]};
    if (v.size() != 3) throw ConfigError("config: `" + key + "` wants three values (t,h,w)");
    return v;
}

std::string fmt_double(double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
}

}  // namespace

void RunConfig::validate(bool check_paths) const {
    backbone.validate();
    train.validate();
    if (preprocess.crop <= 0 || preprocess.crop > preprocess.resize) {
        throw ConfigError("config: preprocess needs 0 < crop <= resize");
    }
    if (use_synthetic) {
        if (!data_dir.empty()) {
            throw ConfigError("config: data.dir is set but data.source is synthetic; pick one");
        }
        synthetic.validate();
    } else {
        if (data_dir.empty()) {
            throw ConfigError("config: data.source = manifests requires data.dir");
        }
        if (check_paths && !std::filesystem::exists(data_dir)) {
            throw ConfigError("config: data.dir does not exist: " + data_dir.string());
        }
    }
    if (backbone.variant != variant) {
        throw ConfigError("config: variant is inconsistent with the backbone");
    }
}

RunConfig parse_run_config(const std::string& text) {
    KeyValueText kv(text);
    RunConfig c;

    c.seed = kv.get_u64("seed", c.seed);
    c.output_dir = kv.get_string("output_dir", c.output_dir.string());
    c.variant = parse_block_variant(kv.get_string("variant", to_string(c.variant)));

    BackboneConfig& b = c.backbone;
    b.in_frames = kv.get_int("backbone.in_frames", b.in_frames);
    b.in_channels = kv.get_int("backbone.in_channels", b.in_channels);
    b.in_height = kv.get_int("backbone.in_height", b.in_height);
    b.in_width = kv.get_int("backbone.in_width", b.in_width);
    const auto num_stages = kv.get_int("backbone.num_stages", static_cast<std::int64_t>(b.stages.size()));
    if (num_stages < 1 || num_stages > 16) throw ConfigError("config: backbone.num_stages out of range");
    std::vector<StageConfig> stages;
    for (std::int64_t i = 0; i < num_stages; ++i) {
        const std::string prefix = "backbone.stage" + std::to_string(i) + ".";
        const StageConfig fallback = i < static_cast<std::int64_t>(b.stages.size())
                                         ? b.stages[static_cast<std::size_t>(i)]
                                         : StageConfig{8, 3, 3, 3, {1, 1, 1}, {1, 1, 1}};
        StageConfig s;
        s.out_channels = kv.get_int(prefix + "out_channels", fallback.out_channels);
        const auto k = triple(kv, prefix + "kernel", fallback.kernel_t, fallback.kernel_h,
                              fallback.kernel_w);
        s.kernel_t = k[0];
        s.kernel_h = k[1];
        s.kernel_w = k[2];
        const auto st = triple(kv, prefix + "stride", fallback.stride.t, fallback.stride.h,
                               fallback.stride.w);
        s.stride = {st[0], st[1], st[2]};
        const auto p = triple(kv, prefix + "padding", fallback.padding.t, fallback.padding.h,
                              fallback.padding.w);
        s.padding = {p[0], p[1], p[2]};
        stages.push_back(s);
    }
    b.stages = std::move(stages);
    std::vector<std::int64_t> cta_default(b.cta_after.begin(), b.cta_after.end());
    b.cta_after.clear();
    for (const auto idx : kv.get_int_list("backbone.cta_after", cta_default)) {
        b.cta_after.insert(static_cast<int>(idx));
    }
    b.reduction = kv.get_int("backbone.reduction", b.reduction);
    b.hidden_y = kv.get_int("backbone.hidden_y", b.hidden_y);
    b.hidden_d = kv.get_int("backbone.hidden_d", b.hidden_d);
    b.dropout_p = kv.get_double("backbone.dropout", b.dropout_p);
    b.variant = c.variant;

    TrainConfig& t = c.train;
    t.batch_size = static_cast<int>(kv.get_int("train.batch_size", t.batch_size));
    t.lr_stage1 = kv.get_double("train.lr_stage1", t.lr_stage1);
    t.lr_stage2 = kv.get_double("train.lr_stage2", t.lr_stage2);
    t.stage1_epochs = static_cast<int>(kv.get_int("train.stage1_epochs", t.stage1_epochs));
    t.stage2_epochs = static_cast<int>(kv.get_int("train.stage2_epochs", t.stage2_epochs));
    t.momentum = kv.get_double("train.momentum", t.momentum);
    t.weight_decay = kv.get_double("train.weight_decay", t.weight_decay);
    t.lambda_gamma = kv.get_double("train.lambda_gamma", t.lambda_gamma);
    t.seed = c.seed;

    c.preprocess.resize = kv.get_int("preprocess.resize", c.preprocess.resize);
    c.preprocess.crop = kv.get_int("preprocess.crop", c.preprocess.crop);

    const auto source = kv.get_string("data.source", c.use_synthetic ? "synthetic" : "manifests");
    if (source == "synthetic") {
        c.use_synthetic = true;
    } else if (source == "manifests") {
        c.use_synthetic = false;
    } else {
        throw ConfigError("config: data.source must be `synthetic` or `manifests`");
    }
    c.data_dir = kv.get_string("data.dir", c.data_dir.string());

    SyntheticConfig& s = c.synthetic;
    s.num_classes = kv.get_int("synthetic.num_classes", s.num_classes);
    s.clips_per_class_per_domain =
        kv.get_int("synthetic.clips_per_class", s.clips_per_class_per_domain);
    s.frames = kv.get_int("synthetic.frames", s.frames);
    s.height = kv.get_int("synthetic.height", s.height);
    s.width = kv.get_int("synthetic.width", s.width);
    s.channels = kv.get_int("synthetic.channels", s.channels);
    s.domain_shift.brightness_offset =
        kv.get_double("synthetic.brightness_offset", s.domain_shift.brightness_offset);
    s.domain_shift.contrast_scale =
        kv.get_double("synthetic.contrast_scale", s.domain_shift.contrast_scale);
    s.domain_shift.noise_sigma = kv.get_double("synthetic.noise_sigma", s.domain_shift.noise_sigma);
    s.domain_shift.background_palette_id = static_cast<int>(
        kv.get_int("synthetic.background_palette", s.domain_shift.background_palette_id));
    s.seed = kv.get_u64("synthetic.seed", s.seed);

    kv.fail_on_unread();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string serialize_run_config(const RunConfig& c) {
    std::ostringstream out;
    out << "seed = " << c.seed << "\n";
    out << "output_dir = " << c.output_dir.string() << "\n";
    out << "variant = " << to_string(c.variant) << "\n";
    out << "\n";
    const BackboneConfig& b = c.backbone;
    out << "backbone.in_frames = " << b.in_frames << "\n";
    out << "backbone.in_channels = " << b.in_channels << "\n";
    out << "backbone.in_height = " << b.in_height << "\n";
    out << "backbone.in_width = " << b.in_width << "\n";
    out << "backbone.num_stages = " << b.stages.size() << "\n";
    for (std::size_t i = 0; i < b.stages.size(); ++i) {
        const auto& s = b.stages[i];
        const std::string prefix = "backbone.stage" + std::to_string(i) + ".";
        out << prefix << "out_channels = " << s.out_channels << "\n";
        out << prefix << "kernel = " << s.kernel_t << "," << s.kernel_h << "," << s.kernel_w << "\n";
        out << prefix << "stride = " << s.stride.t << "," << s.stride.h << "," << s.stride.w << "\n";
        out << prefix << "padding = " << s.padding.t << "," << s.padding.h << "," << s.padding.w
            << "\n";
    }
    out << "backbone.cta_after = ";
    bool first = true;
    for (const auto idx : b.cta_after) {
        if (!first) out << ",";
        out << idx;
        first = false;
    }
    out << "\n";
    out << "backbone.reduction = " << b.reduction << "\n";
    out << "backbone.hidden_y = " << b.hidden_y << "\n";
    out << "backbone.hidden_d = " << b.hidden_d << "\n";
    out << "backbone.dropout = " << fmt_double(b.dropout_p) << "\n";
    out << "\n";
    const TrainConfig& t = c.train;
    out << "train.batch_size = " << t.batch_size << "\n";
    out << "train.lr_stage1 = " << fmt_double(t.lr_stage1) << "\n";
    out << "train.lr_stage2 = " << fmt_double(t.lr_stage2) << "\n";
    out << "train.stage1_epochs = " << t.stage1_epochs << "\n";
    out << "train.stage2_epochs = " << t.stage2_epochs << "\n";
    out << "train.momentum = " << fmt_double(t.momentum) << "\n";
    out << "train.weight_decay = " << fmt_double(t.weight_decay) << "\n";
    out << "train.lambda_gamma = " << fmt_double(t.lambda_gamma) << "\n";
    out << "\n";
    out << "preprocess.resize = " << c.preprocess.resize << "\n";
    out << "preprocess.crop = " << c.preprocess.crop << "\n";
    out << "\n";
    out << "data.source = " << (c.use_synthetic ? "synthetic" : "manifests") << "\n";
    if (!c.data_dir.empty()) out << "data.dir = " << c.data_dir.string() << "\n";
    const SyntheticConfig& s = c.synthetic;
    out << "synthetic.num_classes = " << s.num_classes << "\n";
    out << "synthetic.clips_per_class = " << s.clips_per_class_per_domain << "\n";
    out << "synthetic.frames = " << s.frames << "\n";
    out << "synthetic.height = " << s.height << "\n";
    out << "synthetic.width = " << s.width << "\n";
    out << "synthetic.channels = " << s.channels << "\n";
    out << "synthetic.brightness_offset = " << fmt_double(s.domain_shift.brightness_offset) << "\n";
    out << "synthetic.contrast_scale = " << fmt_double(s.domain_shift.contrast_scale) << "\n";
    out << "synthetic.noise_sigma = " << fmt_double(s.domain_shift.noise_sigma) << "\n";
    out << "synthetic.background_palette = " << s.domain_shift.background_palette_id << "\n";
    out << "synthetic.seed = " << s.seed << "\n";
    return out.str();
}

std::string default_config_text() {
    return R"(# ctan run configuration.
# Lines are `key = value`; `#` starts a comment.

# Root seed. Data, initialization, dropout and shuffling draw from
# independent streams derived from it.
seed = 42

# All artifacts (metrics, checkpoints, tables) land here.
output_dir = runs/default

# Attention block variant: C, T, TC or CT.
variant = CT

# ---- feature extractor -----------------------------------------------------
# Input geometry after preprocessing (frames, channels, height, width).
backbone.in_frames = 16
backbone.in_channels = 1
backbone.in_height = 28
backbone.in_width = 28

backbone.num_stages = 3
backbone.stage0.out_channels = 8
backbone.stage0.kernel = 3,3,3
backbone.stage0.stride = 1,2,2
backbone.stage0.padding = 1,1,1
backbone.stage1.out_channels = 16
backbone.stage1.kernel = 3,3,3
backbone.stage1.stride = 1,2,2
backbone.stage1.padding = 1,1,1
backbone.stage2.out_channels = 32
backbone.stage2.kernel = 3,3,3
backbone.stage2.stride = 1,2,2
backbone.stage2.padding = 1,1,1

# Stage indices that receive an attention block (middle stages only).
backbone.cta_after = 1
# Bottleneck reduction ratio of the attention blocks.
backbone.reduction = 4
# Hidden widths of the classifier and discriminator heads.
backbone.hidden_y = 32
backbone.hidden_d = 32
# Classifier dropout rate.
backbone.dropout = 0.5

# ---- training schedule ------------------------------------------------------
train.batch_size = 16
# Stage 1: supervised warm-up with the reversal coefficient pinned at 0.
train.lr_stage1 = 0.01
train.stage1_epochs = 10
# Stage 2: adversarial training with the coefficient ramped toward 1.
train.lr_stage2 = 0.001
train.stage2_epochs = 20
train.momentum = 0.9
train.weight_decay = 0.0005
# Ramp sharpness: lambda(p) = 2 / (1 + exp(-gamma p)) - 1.
train.lambda_gamma = 10.0

# ---- preprocessing ----------------------------------------------------------
# Frames are resized to `resize` and cropped to `crop` (random in training,
# centered in evaluation).
preprocess.resize = 32
preprocess.crop = 28

# ---- data -------------------------------------------------------------------
# Exactly one source: `synthetic` generates the benchmark in memory,
# `manifests` loads a dataset directory written by `synth-data`.
data.source = synthetic
# data.dir = runs/default/data

synthetic.num_classes = 4
synthetic.clips_per_class = 40
synthetic.frames = 16
synthetic.height = 32
synthetic.width = 32
synthetic.channels = 1
# Photometric regime of the target domain; the source renders neutrally.
synthetic.brightness_offset = 0.3
synthetic.contrast_scale = 0.7
synthetic.noise_sigma = 0.1
synthetic.background_palette = 0
# Data seed, independent of the run seed so the benchmark stays fixed
# while training seeds vary.
synthetic.seed = 7
)";
}

}  // namespace cta
