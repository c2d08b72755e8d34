#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace skiff {

/// Dense feature matrix with integer labels. Rows are samples.
struct Dataset {
    size_t rows = 0;
    size_t cols = 0;
    int32_t num_labels = 0;
    std::vector<float> features;  // rows * cols, row-major
    std::vector<int32_t> labels;  // rows

    std::span<const float> row(size_t i) const {
        return std::span<const float>(features.data() + i * cols, cols);
    }
    void validate() const;  // throws ShapeMismatch on inconsistency
};

// On-disk layout under a dataset directory:
//   <dir>/train.mat  <dir>/train.lab  and optionally val.mat / val.lab
// Matrix file: 16-byte header (u32 magic 'FLMT', u32 rows, u32 cols,
// u32 label_count), then rows*cols little-endian float32.
// Label file: 16-byte header (u32 magic 'FLLB', u32 rows, u32 1,
// u32 label_count), then rows little-endian int32.

void save_dataset(const Dataset& d, const std::filesystem::path& dir, const std::string& split);
Dataset load_dataset(const std::filesystem::path& dir, const std::string& split);
bool dataset_exists(const std::filesystem::path& dir, const std::string& split);

/// Gaussian class blobs: `classes` means placed on a seeded random sphere of
/// radius `separation`, unit-variance noise. Labels are balanced (n rounded
/// down to a multiple of `classes` is split evenly, remainder spread from
/// label 0).
Dataset make_blobs(size_t n, size_t dim, int32_t classes, double separation, uint64_t seed);

/// Per-label sample counts, keyed by the label rendered as a string.
std::map<std::string, int64_t> label_histogram(const Dataset& d);

Dataset take_subset(const Dataset& d, const std::vector<uint32_t>& indices);

}  // namespace skiff
