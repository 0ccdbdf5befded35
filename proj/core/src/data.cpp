#include "ctan/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ctan/tensor_io.hpp"

namespace cta {

// ---------------------------------------------------------------------------
// Windowing and splits
// ---------------------------------------------------------------------------

std::vector<std::int64_t> window_segments(std::int64_t frame_count, std::int64_t window,
                                          std::int64_t overlap) {
    if (overlap < 0 || overlap >= window) {
        throw std::invalid_argument("window_segments: overlap must satisfy 0 <= overlap < window");
    }
    const std::int64_t stride = window - overlap;
    std::vector<std::int64_t> starts;
    for (std::int64_t s = 0; s + window <= frame_count; s += stride) starts.push_back(s);
    return starts;
}

namespace {

bool record_order(const SegmentRecord& a, const SegmentRecord& b) {
    if (a.video_id != b.video_id) return a.video_id < b.video_id;
    return a.start_frame < b.start_frame;
}

}  // namespace

std::pair<std::vector<SegmentRecord>, std::vector<SegmentRecord>> split_test_equidistant(
    const std::vector<SegmentRecord>& records) {
    std::map<std::int64_t, std::vector<SegmentRecord>> by_class;
    for (const auto& r : records) by_class[r.label].push_back(r);

    std::vector<SegmentRecord> train, test;
    for (auto& [label, group] : by_class) {
        std::sort(group.begin(), group.end(), record_order);
        for (std::size_t i = 0; i < group.size(); ++i) {
            if (i % 5 == 4) {
                test.push_back(group[i]);
            } else {
                train.push_back(group[i]);
            }
        }
    }
    return {std::move(train), std::move(test)};
}

std::pair<std::vector<SegmentRecord>, std::vector<SegmentRecord>> split_val_random(
    const std::vector<SegmentRecord>& records, double val_fraction, std::uint64_t seed) {
    if (records.empty()) throw std::invalid_argument("split_val_random: empty input");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
        throw std::invalid_argument("split_val_random: fraction must lie in [0, 1)");
    }
    std::vector<SegmentRecord> shuffled = records;
    Rng rng(seed);
    shuffle(shuffled, rng);
    const std::size_t n_val =
        static_cast<std::size_t>(std::ceil(val_fraction * static_cast<double>(shuffled.size())));
    std::vector<SegmentRecord> val(shuffled.begin(), shuffled.begin() + n_val);
    std::vector<SegmentRecord> train(shuffled.begin() + n_val, shuffled.end());
    return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

namespace {

// Half-pixel-center bilinear sampling; a same-size resize is the identity.
void resize_plane(const float* src, std::int64_t h0, std::int64_t w0, float* dst,
                  std::int64_t h1, std::int64_t w1) {
    const double sy = static_cast<double>(h0) / static_cast<double>(h1);
    const double sx = static_cast<double>(w0) / static_cast<double>(w1);
    for (std::int64_t y = 0; y < h1; ++y) {
        double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
        fy = std::min(std::max(fy, 0.0), static_cast<double>(h0 - 1));
        const std::int64_t y0 = static_cast<std::int64_t>(fy);
        const std::int64_t y1 = std::min(y0 + 1, h0 - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::int64_t x = 0; x < w1; ++x) {
            double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
            fx = std::min(std::max(fx, 0.0), static_cast<double>(w0 - 1));
            const std::int64_t x0 = static_cast<std::int64_t>(fx);
            const std::int64_t x1 = std::min(x0 + 1, w0 - 1);
            const double wx = fx - static_cast<double>(x0);
            const double top = (1.0 - wx) * src[y0 * w0 + x0] + wx * src[y0 * w0 + x1];
            const double bot = (1.0 - wx) * src[y1 * w0 + x0] + wx * src[y1 * w0 + x1];
            dst[y * w1 + x] = static_cast<float>((1.0 - wy) * top + wy * bot);
        }
    }
}

}  // namespace

Tensor preprocess_clip(const Tensor& frames, const PreprocessConfig& cfg, bool train_mode,
                       Rng& rng) {
    if (frames.rank() != 4) {
        throw std::invalid_argument("preprocess_clip: clip must be (T, C, H, W)");
    }
    if (cfg.crop <= 0 || cfg.resize <= 0 || cfg.crop > cfg.resize) {
        throw std::invalid_argument("preprocess_clip: need 0 < crop <= resize");
    }
    const std::int64_t t = frames.extent(0);
    const std::int64_t c = frames.extent(1);
    const std::int64_t h0 = frames.extent(2);
    const std::int64_t w0 = frames.extent(3);
    const std::int64_t s = cfg.resize;
    const std::int64_t cr = cfg.crop;

    // One offset per clip, shared by every frame.
    std::int64_t oy, ox;
    if (train_mode) {
        oy = static_cast<std::int64_t>(rng.next_uniform() * static_cast<double>(s - cr + 1));
        ox = static_cast<std::int64_t>(rng.next_uniform() * static_cast<double>(s - cr + 1));
        oy = std::min(oy, s - cr);
        ox = std::min(ox, s - cr);
    } else {
        oy = (s - cr) / 2;
        ox = (s - cr) / 2;
    }

    const bool needs_resize = h0 != s || w0 != s;
    std::vector<float> resized(needs_resize ? static_cast<std::size_t>(s * s) : 0);
    std::vector<float> out(static_cast<std::size_t>(t * c * cr * cr));
    const float* src = frames.values().data();
    for (std::int64_t ti = 0; ti < t; ++ti) {
        for (std::int64_t ci = 0; ci < c; ++ci) {
            const float* plane = src + (ti * c + ci) * h0 * w0;
            const float* canvas = plane;
            if (needs_resize) {
                resize_plane(plane, h0, w0, resized.data(), s, s);
                canvas = resized.data();
            }
            float* dst = out.data() + (ti * c + ci) * cr * cr;
            for (std::int64_t y = 0; y < cr; ++y) {
                const float* row = canvas + (y + oy) * s + ox;
                std::copy(row, row + cr, dst + y * cr);
            }
        }
    }
    return Tensor::from_values({1, t, c, cr, cr}, std::move(out));
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

void SyntheticConfig::validate() const {
    if (num_classes < 1 || num_classes > 4) {
        throw std::invalid_argument("synthetic: num_classes must lie in [1, 4] (one motion law each)");
    }
    if (clips_per_class_per_domain < 1) {
        throw std::invalid_argument("synthetic: need at least one clip per class per domain");
    }
    if (frames < 1 || height < 8 || width < 8 || channels < 1) {
        throw std::invalid_argument("synthetic: pattern does not fit the configured frame extents");
    }
    if (domain_shift.noise_sigma < 0.0) {
        throw std::invalid_argument("synthetic: noise sigma must be nonnegative");
    }
    if (!class_keep_fraction.empty() &&
        static_cast<std::int64_t>(class_keep_fraction.size()) != num_classes) {
        throw std::invalid_argument("synthetic: class_keep_fraction must have one entry per class");
    }
}

std::vector<std::string> synthetic_class_names(std::int64_t num_classes) {
    static const char* kNames[] = {"slide_right", "slide_down", "orbit", "pulse"};
    std::vector<std::string> names;
    for (std::int64_t k = 0; k < num_classes; ++k) names.emplace_back(kNames[k]);
    return names;
}

namespace {

struct MotionState {
    double cx = 0, cy = 0, sigma = 2.0, amplitude = 0.7;
};

// Per-clip motion trajectory, one state per frame. Drawn entirely from the
// clip-keyed stream so both domains share the law exactly.
std::vector<MotionState> draw_motion(std::int64_t law, std::int64_t frames, std::int64_t h,
                                     std::int64_t w, Rng& rng) {
    std::vector<MotionState> states(frames);
    const double amplitude = rng.next_uniform(0.55, 0.85);
    const double sigma = rng.next_uniform(1.6, 2.4);
    const double hd = static_cast<double>(h);
    const double wd = static_cast<double>(w);
    const double steps = static_cast<double>(std::max<std::int64_t>(frames - 1, 1));
    switch (law) {
        case 0: {  // horizontal slide, strictly increasing column
            const double cy = rng.next_uniform(0.35 * hd, 0.65 * hd);
            const double x0 = rng.next_uniform(4.0, 7.0);
            const double x1 = rng.next_uniform(wd - 8.0, wd - 5.0);
            for (std::int64_t t = 0; t < frames; ++t) {
                states[t] = {x0 + (x1 - x0) * static_cast<double>(t) / steps, cy, sigma, amplitude};
            }
            break;
        }
        case 1: {  // vertical slide
            const double cx = rng.next_uniform(0.35 * wd, 0.65 * wd);
            const double y0 = rng.next_uniform(4.0, 7.0);
            const double y1 = rng.next_uniform(hd - 8.0, hd - 5.0);
            for (std::int64_t t = 0; t < frames; ++t) {
                states[t] = {cx, y0 + (y1 - y0) * static_cast<double>(t) / steps, sigma, amplitude};
            }
            break;
        }
        case 2: {  // orbit around a near-central point
            const double ccx = rng.next_uniform(0.42 * wd, 0.58 * wd);
            const double ccy = rng.next_uniform(0.42 * hd, 0.58 * hd);
            const double radius = rng.next_uniform(0.17 * std::min(hd, wd), 0.26 * std::min(hd, wd));
            const double phase = rng.next_uniform(0.0, 6.283185307179586);
            const double swing = (rng.next_uniform() < 0.5 ? 1.0 : -1.0) *
                                 rng.next_uniform(0.8, 1.1) * 6.283185307179586;
            for (std::int64_t t = 0; t < frames; ++t) {
                const double a = phase + swing * static_cast<double>(t) / steps;
                states[t] = {ccx + radius * std::cos(a), ccy + radius * std::sin(a), sigma,
                             amplitude};
            }
            break;
        }
        default: {  // pulse in place
            const double cx = rng.next_uniform(0.4 * wd, 0.6 * wd);
            const double cy = rng.next_uniform(0.4 * hd, 0.6 * hd);
            const double base = rng.next_uniform(1.8, 2.6);
            const double depth = rng.next_uniform(0.45, 0.7);
            const double cycles = rng.next_uniform() < 0.5 ? 1.0 : 2.0;
            const double phase = rng.next_uniform(0.0, 6.283185307179586);
            for (std::int64_t t = 0; t < frames; ++t) {
                const double a = phase + 6.283185307179586 * cycles * static_cast<double>(t) / steps;
                states[t] = {cx, cy, base * (1.0 + depth * std::sin(a)), amplitude};
            }
            break;
        }
    }
    return states;
}

void render_background(std::vector<float>& plane, std::int64_t h, std::int64_t w, int palette,
                       Rng& rng) {
    const double lo = rng.next_uniform(0.05, 0.15);
    const double hi = rng.next_uniform(0.20, 0.30);
    const double cx = 0.5 * static_cast<double>(w - 1);
    const double cy = 0.5 * static_cast<double>(h - 1);
    const double max_r = std::sqrt(cx * cx + cy * cy);
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            double u;
            switch (palette % 3) {
                case 0: u = static_cast<double>(x) / static_cast<double>(w - 1); break;
                case 1: u = static_cast<double>(y) / static_cast<double>(h - 1); break;
                default: {
                    const double dx = static_cast<double>(x) - cx;
                    const double dy = static_cast<double>(y) - cy;
                    u = std::sqrt(dx * dx + dy * dy) / max_r;
                    break;
                }
            }
            plane[y * w + x] = static_cast<float>(lo + (hi - lo) * u);
        }
    }
}

}  // namespace

std::vector<VideoClip> generate_domain_videos(const SyntheticConfig& config, Domain domain,
                                              std::uint64_t domain_seed,
                                              const PhotometricRegime& regime) {
    config.validate();
    const std::int64_t h = config.height;
    const std::int64_t w = config.width;
    const std::int64_t c = config.channels;
    const std::int64_t f = config.frames;
    const char* prefix = domain == Domain::Source ? "src" : "tgt";

    Rng domain_rng(domain_seed);
    std::vector<VideoClip> videos;
    for (std::int64_t k = 0; k < config.num_classes; ++k) {
        const double keep =
            config.class_keep_fraction.empty() ? 1.0 : config.class_keep_fraction[k];
        for (std::int64_t j = 0; j < config.clips_per_class_per_domain; ++j) {
            auto clip_rng =
                domain_rng.split("c" + std::to_string(k) + "_" + std::to_string(j));
            if (keep < 1.0) {
                auto keep_rng = clip_rng.split("keep");
                if (keep_rng.next_uniform() >= keep) continue;
            }
            auto motion_rng = clip_rng.split("motion");
            auto bg_rng = clip_rng.split("background");
            auto noise_rng = clip_rng.split("noise");

            const auto states = draw_motion(k, f, h, w, motion_rng);
            std::vector<float> background(static_cast<std::size_t>(h * w));
            render_background(background, h, w, regime.background_palette_id, bg_rng);

            std::vector<float> values(static_cast<std::size_t>(f * c * h * w));
            for (std::int64_t t = 0; t < f; ++t) {
                const auto& st = states[t];
                const double inv2s2 = 1.0 / (2.0 * st.sigma * st.sigma);
                for (std::int64_t ci = 0; ci < c; ++ci) {
                    // Later channels carry a dimmer copy of the pattern.
                    const double channel_gain = 1.0 - 0.15 * static_cast<double>(ci);
                    float* plane = values.data() + (t * c + ci) * h * w;
                    for (std::int64_t y = 0; y < h; ++y) {
                        const double dy = static_cast<double>(y) - st.cy;
                        for (std::int64_t x = 0; x < w; ++x) {
                            const double dx = static_cast<double>(x) - st.cx;
                            double v = background[y * w + x] +
                                       channel_gain * st.amplitude *
                                           std::exp(-(dx * dx + dy * dy) * inv2s2);
                            v = regime.contrast_scale * (v - 0.5) + 0.5 + regime.brightness_offset;
                            if (regime.noise_sigma > 0.0) {
                                v += regime.noise_sigma * noise_rng.next_gaussian();
                            }
                            plane[y * w + x] = static_cast<float>(std::min(std::max(v, 0.0), 1.0));
                        }
                    }
                }
            }

            char id[64];
            std::snprintf(id, sizeof(id), "%s_c%lld_%03lld", prefix,
                          static_cast<long long>(k), static_cast<long long>(j));
            videos.push_back(
                {id, Tensor::from_values({f, c, h, w}, std::move(values)), k, domain});
        }
    }
    return videos;
}

namespace {

ClipDataset collect_samples(const std::vector<SegmentRecord>& records,
                            const std::vector<VideoClip>& videos,
                            const std::vector<std::string>& class_names) {
    std::map<std::string, const VideoClip*> by_id;
    for (const auto& v : videos) by_id[v.video_id] = &v;
    ClipDataset ds;
    ds.class_names = class_names;
    for (const auto& r : records) {
        const auto it = by_id.find(r.video_id);
        if (it == by_id.end()) throw std::logic_error("synthetic: record without video");
        ds.samples.push_back({r, slice_frames(it->second->frames, r.start_frame, r.length)});
    }
    return ds;
}

DomainData build_domain(const SyntheticConfig& config, std::vector<VideoClip> videos,
                        std::uint64_t split_seed, const std::vector<std::string>& class_names) {
    std::vector<SegmentRecord> records;
    for (const auto& v : videos) {
        for (const auto start : window_segments(v.frames.extent(0))) {
            records.push_back({v.video_id, start, kSegmentLength, v.label, v.domain});
        }
    }
    auto [train_all, test] = split_test_equidistant(records);
    auto [train, val] = split_val_random(train_all, 0.1, split_seed);

    DomainData out;
    out.train = collect_samples(train, videos, class_names);
    out.val = collect_samples(val, videos, class_names);
    out.test = collect_samples(test, videos, class_names);
    out.videos = std::move(videos);
    (void)config;
    return out;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticConfig& config) {
    config.validate();
    Rng root(config.seed);
    const PhotometricRegime neutral{};

    SyntheticData data;
    data.class_names = synthetic_class_names(config.num_classes);
    data.source = build_domain(
        config, generate_domain_videos(config, Domain::Source, root.split("source").seed(), neutral),
        root.split("split.source").seed(), data.class_names);
    data.target = build_domain(
        config,
        generate_domain_videos(config, Domain::Target, root.split("target").seed(),
                               config.domain_shift),
        root.split("split.target").seed(), data.class_names);
    return data;
}

// ---------------------------------------------------------------------------
// Manifest and dataset I/O
// ---------------------------------------------------------------------------

Tensor slice_frames(const Tensor& video, std::int64_t start, std::int64_t length) {
    if (video.rank() != 4) throw std::invalid_argument("slice_frames: video must be (F, C, H, W)");
    const std::int64_t f = video.extent(0);
    if (start < 0 || length <= 0 || start + length > f) {
        throw std::invalid_argument("slice_frames: segment exceeds the video");
    }
    const std::int64_t per_frame = video.numel() / f;
    const auto v = video.values();
    std::vector<float> out(v.begin() + start * per_frame, v.begin() + (start + length) * per_frame);
    return Tensor::from_values({length, video.extent(1), video.extent(2), video.extent(3)},
                               std::move(out));
}

namespace {

constexpr const char* kManifestHeader = "video_id,start_frame,length,label,domain";
constexpr const char* kClassFileName = "classes.txt";

Split split_from_filename(const std::filesystem::path& path) {
    const auto stem = path.stem().string();
    if (stem.ends_with("_test") || stem == "test") return Split::Test;
    if (stem.ends_with("_val") || stem == "val") return Split::Val;
    return Split::Train;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (const char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

std::vector<std::string> load_class_names(const std::filesystem::path& dir) {
    const auto path = dir / kClassFileName;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("manifest: missing class list " + path.string());
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) names.push_back(line);
    }
    if (names.empty()) throw std::runtime_error("manifest: empty class list " + path.string());
    return names;
}

void save_class_names(const std::vector<std::string>& names, const std::filesystem::path& dir) {
    std::ofstream out(dir / kClassFileName);
    if (!out) throw std::runtime_error("manifest: cannot write class list in " + dir.string());
    for (const auto& n : names) out << n << "\n";
}

}  // namespace

Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("manifest: cannot open " + path.string());

    Manifest m;
    m.split = split_from_filename(path);
    m.class_names = load_class_names(path.parent_path());

    std::map<std::string, std::int64_t> class_index;
    for (std::size_t i = 0; i < m.class_names.size(); ++i) {
        class_index[m.class_names[i]] = static_cast<std::int64_t>(i);
    }

    std::string line;
    std::size_t line_no = 0;
    std::set<std::pair<std::string, std::int64_t>> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1) {
            if (line != kManifestHeader) {
                throw std::runtime_error("manifest: bad header at line 1 in " + path.string());
            }
            continue;
        }
        const auto fields = split_csv_line(line);
        if (fields.size() != 5) {
            throw std::runtime_error("manifest: expected 5 fields at line " +
                                     std::to_string(line_no) + " in " + path.string());
        }
        SegmentRecord r;
        r.video_id = fields[0];
        try {
            r.start_frame = std::stoll(fields[1]);
            r.length = std::stoll(fields[2]);
        } catch (const std::exception&) {
            throw std::runtime_error("manifest: bad integer at line " + std::to_string(line_no));
        }
        const auto ci = class_index.find(fields[3]);
        if (ci == class_index.end()) {
            throw std::runtime_error("manifest: unknown class name '" + fields[3] + "' at line " +
                                     std::to_string(line_no));
        }
        r.label = ci->second;
        if (fields[4] == "source") {
            r.domain = Domain::Source;
        } else if (fields[4] == "target") {
            r.domain = Domain::Target;
        } else {
            throw std::runtime_error("manifest: unknown domain '" + fields[4] + "' at line " +
                                     std::to_string(line_no));
        }
        if (!seen.insert({r.video_id, r.start_frame}).second) {
            throw std::runtime_error("manifest: duplicate (video_id, start_frame) at line " +
                                     std::to_string(line_no) + ": " + r.video_id + "," +
                                     fields[1]);
        }
        m.records.push_back(std::move(r));
    }
    return m;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
    for (const auto& r : manifest.records) {
        if (r.label < 0 || r.label >= static_cast<std::int64_t>(manifest.class_names.size())) {
            throw std::invalid_argument("manifest: record label out of range");
        }
    }
    std::set<std::pair<std::string, std::int64_t>> seen;
    for (const auto& r : manifest.records) {
        if (!seen.insert({r.video_id, r.start_frame}).second) {
            throw std::invalid_argument("manifest: duplicate (video_id, start_frame): " +
                                        r.video_id);
        }
    }
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("manifest: cannot write " + path.string());
    out << kManifestHeader << "\n";
    for (const auto& r : manifest.records) {
        out << r.video_id << "," << r.start_frame << "," << r.length << ","
            << manifest.class_names[r.label] << "," << to_string(r.domain) << "\n";
    }
    save_class_names(manifest.class_names, path.parent_path());
}

void save_synthetic_dataset(const SyntheticData& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "clips");

    const auto write_domain = [&](const DomainData& d, const char* name) {
        for (const auto& v : d.videos) {
            save_tensor(dir / "clips" / (v.video_id + ".ctan"), v.frames);
        }
        const auto manifest_for = [&](const ClipDataset& ds, Split split) {
            Manifest m;
            m.split = split;
            m.class_names = data.class_names;
            for (const auto& s : ds.samples) m.records.push_back(s.record);
            return m;
        };
        save_manifest(manifest_for(d.train, Split::Train),
                      dir / (std::string(name) + "_train.csv"));
        save_manifest(manifest_for(d.val, Split::Val), dir / (std::string(name) + "_val.csv"));
        save_manifest(manifest_for(d.test, Split::Test), dir / (std::string(name) + "_test.csv"));
    };
    write_domain(data.source, "source");
    write_domain(data.target, "target");
}

ClipDataset load_clip_dataset(const std::filesystem::path& manifest_path) {
    const auto manifest = load_manifest(manifest_path);
    const auto clip_dir = manifest_path.parent_path() / "clips";

    ClipDataset ds;
    ds.class_names = manifest.class_names;
    std::map<std::string, Tensor> cache;
    for (const auto& r : manifest.records) {
        auto it = cache.find(r.video_id);
        if (it == cache.end()) {
            it = cache.emplace(r.video_id, load_tensor(clip_dir / (r.video_id + ".ctan"))).first;
        }
        ds.samples.push_back({r, slice_frames(it->second, r.start_frame, r.length)});
    }
    return ds;
}

}  // namespace cta
