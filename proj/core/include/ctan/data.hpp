#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ctan/rng.hpp"
#include "ctan/tensor.hpp"

namespace cta {

/// Domain label: source = 1, target = 0.
enum class Domain : int { Target = 0, Source = 1 };

inline const char* to_string(Domain d) { return d == Domain::Source ? "source" : "target"; }
inline std::int64_t domain_value(Domain d) { return static_cast<std::int64_t>(d); }

enum class Split { Train, Val, Test };

inline const char* to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

inline constexpr std::int64_t kSegmentLength = 16;
inline constexpr std::int64_t kSegmentOverlap = 4;

struct SegmentRecord {
    std::string video_id;
    std::int64_t start_frame = 0;
    std::int64_t length = kSegmentLength;
    std::int64_t label = 0;
    Domain domain = Domain::Source;
    bool operator==(const SegmentRecord&) const = default;
};

struct Manifest {
    std::vector<SegmentRecord> records;
    Split split = Split::Train;
    std::vector<std::string> class_names;
    bool operator==(const Manifest&) const = default;
};

/// One segment with its frames in memory, shaped (length, C, H, W).
struct ClipSample {
    SegmentRecord record;
    Tensor frames;
};

struct ClipDataset {
    std::vector<ClipSample> samples;
    std::vector<std::string> class_names;
    bool empty() const { return samples.empty(); }
    std::size_t size() const { return samples.size(); }
};

/// A full generated video, before segment extraction.
struct VideoClip {
    std::string video_id;
    Tensor frames;  // (F, C, H, W)
    std::int64_t label = 0;
    Domain domain = Domain::Source;
};

// ---------------------------------------------------------------------------
// Windowing and splits
// ---------------------------------------------------------------------------

/// Start frames of fixed windows at stride (window - overlap). Videos shorter
/// than one window yield an empty list.
std::vector<std::int64_t> window_segments(std::int64_t frame_count,
                                          std::int64_t window = kSegmentLength,
                                          std::int64_t overlap = kSegmentOverlap);

/// Stratified 8:2 split: within each class, records are ordered by
/// (video_id, start_frame) and every fifth one (i mod 5 == 4) goes to test.
/// Returns (train, test); classes are emitted in ascending label order.
std::pair<std::vector<SegmentRecord>, std::vector<SegmentRecord>> split_test_equidistant(
    const std::vector<SegmentRecord>& records);

/// Seeded 9:1 split of an already-built train set: shuffle, first
/// ceil(val_fraction * m) records go to validation. Returns (train, val).
std::pair<std::vector<SegmentRecord>, std::vector<SegmentRecord>> split_val_random(
    const std::vector<SegmentRecord>& records, double val_fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Desk-scale analog of the 256 -> 224 crop: resize to `resize`, crop to
/// `crop` (randomly in train mode, centered in eval mode).
struct PreprocessConfig {
    std::int64_t resize = 32;
    std::int64_t crop = 28;
    bool operator==(const PreprocessConfig&) const = default;
};

/// Bilinear-resizes each frame to resize x resize then crops to crop x crop;
/// one crop offset per clip, shared by all frames. Input is (T, C, H0, W0)
/// with values already in [0, 1]; output is (1, T, C, crop, crop).
Tensor preprocess_clip(const Tensor& frames, const PreprocessConfig& cfg, bool train_mode,
                       Rng& rng);

// ---------------------------------------------------------------------------
// Synthetic domain-shift benchmark
// ---------------------------------------------------------------------------

/// Per-domain photometric regime. The source domain renders neutrally
/// (offset 0, scale 1, no noise, palette 0); the target domain applies the
/// configured shift.
struct PhotometricRegime {
    double brightness_offset = 0.0;
    double contrast_scale = 1.0;
    double noise_sigma = 0.0;
    int background_palette_id = 0;
    bool operator==(const PhotometricRegime&) const = default;
};

/// Classes are motion laws over a static background: 0 moves horizontally,
/// 1 vertically, 2 circles, 3 pulsates in place. Motion is drawn from
/// clip-keyed streams shared by both domains, so the class-conditional law is
/// identical across domains; only the photometric regime differs.
struct SyntheticConfig {
    std::int64_t num_classes = 4;
    std::int64_t clips_per_class_per_domain = 40;
    std::int64_t frames = 16;
    std::int64_t height = 32;
    std::int64_t width = 32;
    std::int64_t channels = 1;
    PhotometricRegime domain_shift{0.3, 0.7, 0.1, 0};
    std::vector<double> class_keep_fraction;  // optional subsampling; empty keeps everything
    std::uint64_t seed = 7;

    void validate() const;
    bool operator==(const SyntheticConfig&) const = default;
};

struct DomainData {
    std::vector<VideoClip> videos;
    ClipDataset train, val, test;
};

struct SyntheticData {
    DomainData source, target;
    std::vector<std::string> class_names;
};

std::vector<std::string> synthetic_class_names(std::int64_t num_classes);

/// Renders the videos of one domain. Only (config, domain_seed, regime)
/// influence the pixels; the domain tag merely labels the records, so equal
/// seeds and regimes give bitwise-equal frames.
std::vector<VideoClip> generate_domain_videos(const SyntheticConfig& config, Domain domain,
                                              std::uint64_t domain_seed,
                                              const PhotometricRegime& regime);

/// Full benchmark: both domains rendered, windowed into segments, and split
/// 8:2 equidistant test / 9:1 random val per domain. Deterministic from
/// config.seed.
SyntheticData generate_synthetic(const SyntheticConfig& config);

// ---------------------------------------------------------------------------
// Manifest and dataset I/O
// ---------------------------------------------------------------------------

/// Manifest files: UTF-8 text with header
/// `video_id,start_frame,length,label,domain`, labels written as class names
/// resolved against a sibling `classes.txt` (one name per line). The split is
/// implied by the file name (`*_train.csv`, `*_val.csv`, `*_test.csv`). Clip
/// payloads live under `clips/<video_id>.ctan` next to the manifest.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Writes classes.txt, six manifests and one .ctan file per video.
void save_synthetic_dataset(const SyntheticData& data, const std::filesystem::path& dir);

/// Loads a manifest plus its clip payloads into memory.
ClipDataset load_clip_dataset(const std::filesystem::path& manifest_path);

/// Frames [start, start+length) of a (F, C, H, W) video tensor.
Tensor slice_frames(const Tensor& video, std::int64_t start, std::int64_t length);

}  // namespace cta
