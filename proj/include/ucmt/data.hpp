#pragma once

// Synthetic ellipse segmentation data, labeled/unlabeled splitting,
// minibatch schedules and on-disk datasets.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ucmt/tensor.hpp"

namespace ucmt::data {

struct Sample {
    std::int64_t id = 0;
    Tensor image;                                  // [Cin, H, W], values in [0, 1]
    std::optional<std::vector<std::uint8_t>> mask;  // [H, W] class indices

    bool operator==(const Sample&) const = default;
};

struct GeneratorParams {
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t channels = 1;
    std::size_t classes = 2;
    double noise_sigma = 0.1;
    double min_axis = 4.0;
    double max_axis = 14.0;
    double background_lo = 0.2;
    double background_hi = 0.5;
    double gradient_amplitude = 0.15;
    double contrast_lo = 0.12;
    double contrast_hi = 0.3;
};

// n samples with ids [first_id, first_id + n). Every sample draws from its
// own stream keyed by (seed, id), so any subset can be regenerated alone.
std::vector<Sample> generate_synthetic(std::size_t n, const GeneratorParams& params, std::uint64_t seed,
                                       std::int64_t first_id = 0);

struct Split {
    std::vector<Sample> labeled;    // D_L, masks present
    std::vector<Sample> unlabeled;  // D_U, masks removed
    // Masks removed from D_U, for oracle evaluation only; same order as `unlabeled`.
    std::vector<std::vector<std::uint8_t>> withheld_masks;
    double label_ratio = 0.0;
    std::uint64_t seed = 0;
};

// ceil(ratio * n) labeled samples after a seeded shuffle. PreconditionError
// when ratio is outside (0, 1] or yields no labeled sample.
Split split(std::vector<Sample> samples, double label_ratio, std::uint64_t seed);

std::size_t labeled_count(std::size_t n, double label_ratio);

struct BatchIndices {
    std::vector<std::size_t> labeled;    // positions in D_L
    std::vector<std::size_t> unlabeled;  // positions in D_U
};

// One epoch = one pass over D_U in floor(|D_U| / nu) batches. D_L is drawn
// from a fresh seeded permutation each epoch, reshuffling whenever it runs
// out. With an empty D_U (allowed only when `labeled_only`), the epoch is a
// pass over D_L instead.
std::vector<BatchIndices> epoch_batches(std::size_t n_labeled, std::size_t n_unlabeled, std::size_t nl,
                                        std::size_t nu, std::uint64_t seed, std::size_t epoch,
                                        bool labeled_only = false);

struct LabeledBatch {
    Tensor images;  // [B, Cin, H, W]
    LabelMap labels;
    std::vector<std::int64_t> ids;
};

struct UnlabeledBatch {
    Tensor images;
    std::vector<std::int64_t> ids;
};

LabeledBatch gather_labeled(const std::vector<Sample>& pool, const std::vector<std::size_t>& idx);
UnlabeledBatch gather_unlabeled(const std::vector<Sample>& pool, const std::vector<std::size_t>& idx);

// Quantize images to the 8-bit grid used at rest.
std::vector<Sample> quantized(std::vector<Sample> samples);

struct ManifestEntry {
    std::int64_t id = 0;
    std::string image_path;
    std::optional<std::string> mask_path;
};

struct Manifest {
    std::vector<ManifestEntry> entries;
    double label_ratio = 0.0;
    std::uint64_t seed = 0;
    std::size_t labeled = 0;  // N
    std::size_t total = 0;    // M
    std::size_t channels = 1;
};

// Writes <dir>/images/<id>.pgm, <dir>/masks/<id>.pgm (labeled only) and
// <dir>/manifest.tsv. Images are stored quantized to 8 bits.
Manifest save_dataset(const Split& split, const std::filesystem::path& dir);

struct LoadedDataset {
    Manifest manifest;
    std::vector<Sample> samples;  // manifest order
};

// IoError naming the offending path on missing or corrupt files.
LoadedDataset load_dataset(const std::filesystem::path& dir);

double foreground_fraction(const std::vector<Sample>& samples);

}  // namespace ucmt::data
