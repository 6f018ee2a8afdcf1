#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "brain3d/common.hpp"
#include "brain3d/image.hpp"

namespace brain3d::data {

enum class Split { train, val, test };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

// One C x T recording paired with a class label. Values are float32,
// matching the on-disk container exactly.
struct EegTrial {
    std::string trial_id;
    int subject_id = 1;
    int class_label = 0;
    Eigen::MatrixXf data;  // channels x samples
    Split split = Split::train;

    int channels() const { return int(data.rows()); }
    int samples() const { return int(data.cols()); }
    void validate() const;
};

struct ManifestEntry {
    std::string trial_id;
    int subject_id = 1;
    int class_label = 0;
    std::string eeg_path;
    std::string image_path;
    Split split = Split::train;
};

struct Manifest {
    std::vector<ManifestEntry> entries;
    std::vector<std::string> class_names;
    std::filesystem::path root;  // paths resolve against this

    std::filesystem::path resolve(const std::string& rel) const;
    std::map<int, int> per_class_counts() const;
};

// Line-delimited records, one JSON object per line. An optional leading
// header object carries {"class_names": [...]}. Referenced paths must exist.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& m, const std::filesystem::path& path);

// EEG container: "EEG1", u32 channels, u32 samples, u32 reserved, then
// channels*samples little-endian float32, row-major by channel.
EegTrial read_eeg(const std::filesystem::path& path);
void write_eeg(const EegTrial& trial, const std::filesystem::path& path);
std::vector<uint8_t> eeg_bytes(const EegTrial& trial);
EegTrial parse_eeg(const std::vector<uint8_t>& bytes, const std::string& origin = "<eeg>");

struct SplitRatios {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

enum class Stratify { by_class, by_subject };

// Deterministic stratified reassignment of split tags. Proportions hit the
// ratios within one entry per stratum (largest remainder).
Manifest make_splits(const Manifest& m, const SplitRatios& ratios, uint64_t seed,
                     Stratify stratify = Stratify::by_class);

struct SynthSpec {
    int num_classes = 8;
    int trials_per_class = 20;
    int channels = 8;
    int samples = 32;
    double noise_sigma = 0.1;
    uint64_t seed = 0;
    int image_size = 64;
    int subjects = 1;
};

// Desk-scale synthetic dataset: per class a fixed random template matrix,
// trials = template + Gaussian noise, one procedural glyph image per class.
struct SynthDataset {
    Manifest manifest;                        // split via make_splits(0.8/0.1/0.1)
    std::vector<EegTrial> trials;             // aligned with manifest.entries
    std::vector<Image> class_images;          // index = class label
    std::vector<Eigen::MatrixXf> templates;   // index = class label

    const EegTrial& trial_by_id(const std::string& id) const;
};

SynthDataset synth_dataset(const SynthSpec& spec);

// Materializes a SynthDataset: eeg/*.eeg, images/*.ppm, manifest.jsonl.
std::filesystem::path write_synth_dataset(const SynthDataset& ds, const std::filesystem::path& dir);

// Solid hue + per-class geometric glyph; deterministic in (label, count).
Image class_glyph_image(int class_label, int num_classes, int size);

}  // namespace brain3d::data
