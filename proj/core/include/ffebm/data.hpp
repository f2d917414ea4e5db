#pragma once

#include "ffebm/feedforward.hpp"
#include "ffebm/model.hpp"
#include "ffebm/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ffebm {

/// Normalized samples stored contiguously, one row per sample.
struct Dataset {
    Shape sample_shape;
    std::size_t num_classes = 0;
    std::vector<Scalar> values;
    Labels labels;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t sample_numel() const { return shape_numel(sample_shape); }

    /// Rows `indices` as a [B, shape...] tensor; `shape` defaults to sample_shape and must
    /// have the same element count.
    Tensor batch(const std::vector<std::size_t>& indices, const Shape& shape = {}) const;
    Labels batch_labels(const std::vector<std::size_t>& indices) const;
};

inline constexpr Scalar kMnistMean = 0.1307;
inline constexpr Scalar kMnistStd = 0.3081;
inline constexpr Scalar kCifar10Mean[3] = {0.4914, 0.4822, 0.4465};
inline constexpr Scalar kCifar10Std[3] = {0.2470, 0.2435, 0.2616};

/// IDX pair (images magic 0x00000803, labels magic 0x00000801), pixels scaled to [0, 1]
/// then normalized with the MNIST mean and std. Throws FormatError.
Dataset parse_mnist_idx(const std::vector<std::uint8_t>& images, const std::vector<std::uint8_t>& labels);
/// `split` is "train" (train-*-ubyte) or "test" (t10k-*-ubyte) under `root`.
Dataset load_mnist_idx(const std::string& root, const std::string& split);

/// Concatenated 3073-byte records (label, then 3x32x32 channel-major pixels). Throws FormatError.
Dataset parse_cifar10_binary(const std::vector<std::uint8_t>& bytes);
/// `split` is "train" (data_batch_1..5.bin) or "test" (test_batch.bin) under `root`.
Dataset load_cifar10_binary(const std::string& root, const std::string& split);

/// Gaussian clusters with unit noise around random centers scaled by `separation`.
Dataset synthetic_blobs(std::size_t count, std::size_t dim, std::size_t classes, Scalar separation,
                        std::uint64_t seed);

/// First `limit` samples (everything when limit is 0 or larger than the set).
Dataset take(const Dataset& d, std::size_t limit);

struct AugmentSpec {
    Scalar hflip_prob = 0;
    std::size_t crop_pad = 0;
    bool enabled() const { return hflip_prob > 0 || crop_pad > 0; }
};

/// Per-sample horizontal flip with probability hflip_prob, then edge padding by crop_pad
/// and a random crop back to the original size. Batch layout [B, C, H, W].
Tensor augment(const Tensor& batch, const AugmentSpec& spec, Rng& rng);

/// Deterministic building blocks of augment().
Tensor hflip(const Tensor& batch);
Tensor pad_crop(const Tensor& batch, std::size_t pad, const std::vector<std::size_t>& dy,
                const std::vector<std::size_t>& dx);

std::vector<std::uint8_t> read_file(const std::string& path);

}  // namespace ffebm
