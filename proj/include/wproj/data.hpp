#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wproj/core.hpp"

namespace wproj {

/// Seeded generator with named, order-independent child streams:
/// Rng(seed).split("train") always yields the same stream regardless of how
/// much the parent has been used.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    Rng split(std::string_view name) const;
    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Standard normal by Box-Muller (portable across standard libraries).
    double normal();
    /// Uniform integer in [0, n).
    std::size_t below(std::size_t n);

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

struct Dataset {
    GridShape shape{};
    std::size_t classes = 0;
    std::vector<MassVector> images;  ///< unit mass per channel
    std::vector<std::size_t> labels;

    std::size_t size() const noexcept { return images.size(); }
    bool empty() const noexcept { return images.empty(); }
};

// IDX files: big-endian int32 magic (0x00000803 images, 0x00000801 labels),
// big-endian int32 dimensions, then unsigned bytes.

struct IdxImages {
    std::size_t count = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> pixels;  ///< count * rows * cols
};

/// Throws ParseError (with byte offset) on bad magic or truncation, IoError if unreadable.
IdxImages parse_idx_images(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes);

IdxImages read_idx_images(const std::string& path);
std::vector<std::uint8_t> read_idx_labels(const std::string& path);

std::vector<std::uint8_t> encode_idx_images(const IdxImages& images);
std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::string& path);

/// Pixels scaled to [0, 1] and normalized to unit mass. Throws ParseError on a
/// count mismatch and ParameterError on an all-zero image.
Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path);

/// Converts byte images and labels to a unit-mass dataset.
Dataset make_dataset(const IdxImages& images, std::span<const std::uint8_t> labels);

/// Quantizes a unit-mass dataset to bytes (per-image max maps to 255).
std::pair<IdxImages, std::vector<std::uint8_t>> to_idx(const Dataset& data);

/// Synthetic classification task: each class owns a fixed spot on the grid and
/// every example is a jittered Gaussian mass blob at its class spot plus a
/// faint uniform background. Deterministic in `seed`.
Dataset generate_blobs(std::size_t n, std::size_t grid, std::size_t classes, std::uint64_t seed);

/// Binary P5 graymap. Values are mapped by v -> 255 * (v - lo) / (hi - lo), clamped.
void write_pgm(const std::string& path, std::size_t height, std::size_t width, std::span<const double> values,
               double lo, double hi);

struct Graymap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels;
};

Graymap read_pgm(const std::string& path);

}  // namespace wproj
