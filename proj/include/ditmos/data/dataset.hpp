#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "ditmos/nn/tensor.hpp"

namespace ditmos::data {

using nn::Tensor;

/// Labelled channels x length samples, optionally tagged with a subset id.
struct Dataset {
    std::size_t channels = 0;
    std::size_t length = 0;
    std::size_t num_classes = 0;
    std::vector<Tensor> samples;
    std::vector<std::size_t> labels;
    /// Empty, or one id per sample (-1 = unassigned).
    std::vector<int> subset_ids;

    std::size_t size() const noexcept { return samples.size(); }
    nn::Shape sample_shape() const { return {channels, length}; }
    /// Throws std::invalid_argument on any broken invariant.
    void validate() const;
    /// Samples at `indices`, in that order (subset ids carried along).
    Dataset select(std::span<const std::size_t> indices) const;
    /// Indices whose subset id equals `id`.
    std::vector<std::size_t> members_of(int id) const;
    std::vector<std::size_t> class_counts() const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Each row: label, then channels*length values (channel-major). Blank lines
/// and lines starting with '#' are skipped. num_classes = 0 infers max+1.
Dataset load_csv(const std::filesystem::path& path, std::size_t channels, std::size_t length,
                 std::size_t num_classes = 0);
void write_csv(const std::filesystem::path& path, const Dataset& dataset);

/// Binary dataset file, little-endian:
///   "DTMD" | u32 version | u32 count | u32 channels | u32 length |
///   u32 num_classes | count x { u32 label | i32 subset_id | f32[channels*length] }
std::vector<std::uint8_t> serialize_dataset(const Dataset& dataset);
Dataset deserialize_dataset(const std::vector<std::uint8_t>& bytes);
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);

/// Seeded stratified shuffle split; each class contributes
/// round(ratio * count) samples to train, clamped to [1, count - 1].
std::pair<Dataset, Dataset> split_train_test(const Dataset& dataset, double ratio, std::uint64_t seed);

struct SyntheticConfig {
    std::size_t num_classes = 8;
    std::size_t clusters_per_class = 3;
    std::size_t channels = 3;
    std::size_t length = 128;
    std::size_t n = 4000;
    double noise_sigma = 1.0;
    /// Standard deviation of the circular time shift, in samples per unit of
    /// noise_sigma.
    double shift_per_sigma = 20.0;
    /// Slow shared components; template k also carries family k % families.
    std::size_t families = 6;
    double family_amplitude = 2.0;
    std::uint64_t seed = 7;
};

/// Class-balanced mixture of per-(class, cluster) waveform templates, each a
/// sum of enveloped sinusoids per channel plus one broad component shared
/// with the other templates of its family. Each sample is its template
/// circularly shifted by round(noise_sigma * shift_per_sigma * N(0,1)) steps
/// plus N(0, noise_sigma^2) noise, so noise_sigma = 0 reproduces the template
/// exactly. Labels are assigned round-robin, clusters uniformly.
Dataset gen_synthetic(const SyntheticConfig& config);

}  // namespace ditmos::data
