#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcnet/network.hpp"
#include "pcnet/tensor.hpp"

namespace pcnet {

/// Malformed binary input; `offset()` is the byte position of the problem.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

struct Dataset {
    Tensor images;  // (N, C, H, W), values in [0, 1]
    std::vector<std::size_t> labels;
    std::size_t class_count = 0;

    std::size_t size() const { return labels.size(); }
    Shape image_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }
    Tensor image(std::size_t i) const;
    Dataset subset(std::span<const std::size_t> indices) const;
    /// First `n` samples (or all, when fewer).
    Dataset head(std::size_t n) const;
    void validate() const;
};

struct IdxHeader {
    std::uint8_t type_code = 0;
    std::vector<std::uint32_t> dims;
    std::size_t payload_offset = 0;
};

/// Parses the big-endian IDX header; accepts u8 data with 1 or 3 dimensions
/// (magic 0x00000801 or 0x00000803).
IdxHeader read_idx_header(std::span<const std::uint8_t> bytes);

/// u8 payload scaled to [0, 1]. 3-D image files become (N, 1, H, W).
Tensor read_idx(std::span<const std::uint8_t> bytes);
std::vector<std::size_t> read_idx_labels(std::span<const std::uint8_t> bytes);

/// Serializes images in [0, 1] as a 3-D u8 IDX stream (rounded to nearest).
std::vector<std::uint8_t> write_idx_images(const Tensor& images);
std::vector<std::uint8_t> write_idx_labels(std::span<const std::size_t> labels);

Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels,
                         std::size_t class_count = 0);

inline constexpr std::size_t kSynthClasses = 5;

/// Seeded 5-class grayscale set: disk, square, triangle, cross, horizontal
/// stripes, with position/scale jitter and N(0, 0.05^2) background noise.
/// Sample i has label i % 5.
Dataset synth_dataset(std::uint64_t seed, std::size_t n, std::size_t image_size = 16);

/// PCNW container: "PCNW", u32 version (1), u32 count, then per tensor
/// u16 name length, name bytes, u8 dtype (0 = f32), u8 ndim, u32 dims, f32
/// payload. All integers and floats little-endian.
std::vector<std::uint8_t> save_weights(const WeightMap& weights);
WeightMap load_weights(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace pcnet
