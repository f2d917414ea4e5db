#include "ffebm/data.hpp"

#include "ffebm/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>

namespace ffebm {

namespace {

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

}  // namespace

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

Tensor Dataset::batch(const std::vector<std::size_t>& indices, const Shape& shape) const {
    const Shape& s = shape.empty() ? sample_shape : shape;
    const std::size_t n = sample_numel();
    if (shape_numel(s) != n) {
        throw DimensionError("dataset samples of shape " + shape_to_string(sample_shape) + " cannot be viewed as " +
                             shape_to_string(s));
    }
    Shape full{indices.size()};
    full.insert(full.end(), s.begin(), s.end());
    Tensor out(full);
    for (std::size_t b = 0; b < indices.size(); ++b) {
        if (indices[b] >= size()) throw DataError("sample index out of range");
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(indices[b] * n), n, out.raw() + b * n);
    }
    return out;
}

Labels Dataset::batch_labels(const std::vector<std::size_t>& indices) const {
    Labels out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(labels.at(i));
    return out;
}

Dataset parse_mnist_idx(const std::vector<std::uint8_t>& images, const std::vector<std::uint8_t>& labels) {
    if (images.size() < 16) throw FormatError("MNIST images: truncated header");
    if (labels.size() < 8) throw FormatError("MNIST labels: truncated header");
    if (be32(images, 0) != 0x00000803) throw FormatError("MNIST images: bad magic");
    if (be32(labels, 0) != 0x00000801) throw FormatError("MNIST labels: bad magic");
    const std::size_t count = be32(images, 4), rows = be32(images, 8), cols = be32(images, 12);
    if (be32(labels, 4) != count) throw FormatError("MNIST: image and label counts differ");
    if (images.size() != 16 + count * rows * cols) throw FormatError("MNIST images: truncated payload");
    if (labels.size() != 8 + count) throw FormatError("MNIST labels: truncated payload");

    Dataset d;
    d.sample_shape = {1, rows, cols};
    d.num_classes = 10;
    d.values.resize(count * rows * cols);
    for (std::size_t i = 0; i < d.values.size(); ++i) {
        d.values[i] = (images[16 + i] / 255.0 - kMnistMean) / kMnistStd;
    }
    d.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        d.labels[i] = labels[8 + i];
        if (d.labels[i] >= 10) throw DataError("MNIST: label " + std::to_string(d.labels[i]) + " out of range");
    }
    return d;
}

Dataset load_mnist_idx(const std::string& root, const std::string& split) {
    std::string prefix;
    if (split == "train") {
        prefix = "train";
    } else if (split == "test" || split == "val") {
        prefix = "t10k";
    } else {
        throw ConfigError("MNIST split must be train or test, got '" + split + "'");
    }
    return parse_mnist_idx(read_file(root + "/" + prefix + "-images-idx3-ubyte"),
                           read_file(root + "/" + prefix + "-labels-idx1-ubyte"));
}

Dataset parse_cifar10_binary(const std::vector<std::uint8_t>& bytes) {
    constexpr std::size_t kRecord = 3073, kPixels = 3072, kPlane = 1024;
    if (bytes.size() % kRecord != 0) {
        throw FormatError("CIFAR-10: file length " + std::to_string(bytes.size()) + " is not a multiple of 3073");
    }
    const std::size_t count = bytes.size() / kRecord;
    Dataset d;
    d.sample_shape = {3, 32, 32};
    d.num_classes = 10;
    d.values.resize(count * kPixels);
    d.labels.resize(count);
    for (std::size_t r = 0; r < count; ++r) {
        const std::uint8_t* rec = bytes.data() + r * kRecord;
        if (rec[0] >= 10) throw FormatError("CIFAR-10: record " + std::to_string(r) + " has label " +
                                            std::to_string(rec[0]));
        d.labels[r] = rec[0];
        for (std::size_t i = 0; i < kPixels; ++i) {
            const std::size_t c = i / kPlane;
            d.values[r * kPixels + i] = (rec[1 + i] / 255.0 - kCifar10Mean[c]) / kCifar10Std[c];
        }
    }
    return d;
}

Dataset load_cifar10_binary(const std::string& root, const std::string& split) {
    std::vector<std::string> files;
    if (split == "train") {
        for (int i = 1; i <= 5; ++i) files.push_back(root + "/data_batch_" + std::to_string(i) + ".bin");
    } else if (split == "test" || split == "val") {
        files.push_back(root + "/test_batch.bin");
    } else {
        throw ConfigError("CIFAR-10 split must be train or test, got '" + split + "'");
    }
    std::vector<std::uint8_t> all;
    for (const auto& f : files) {
        const auto b = read_file(f);
        all.insert(all.end(), b.begin(), b.end());
    }
    return parse_cifar10_binary(all);
}

Dataset synthetic_blobs(std::size_t count, std::size_t dim, std::size_t classes, Scalar separation,
                        std::uint64_t seed) {
    if (classes < 2 || dim == 0) throw ConfigError("synthetic blobs need at least two classes and one dimension");
    Rng rng(seed);
    std::normal_distribution<Scalar> normal(0.0, 1.0);
    std::vector<Scalar> centers(classes * dim);
    for (auto& c : centers) c = normal(rng) * separation / std::sqrt(static_cast<Scalar>(dim));
    Dataset d;
    d.sample_shape = {dim};
    d.num_classes = classes;
    d.values.resize(count * dim);
    d.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t c = i % classes;
        d.labels[i] = c;
        for (std::size_t j = 0; j < dim; ++j) {
            d.values[i * dim + j] = centers[c * dim + j] + normal(rng) / std::sqrt(static_cast<Scalar>(dim));
        }
    }
    return d;
}

Dataset take(const Dataset& d, std::size_t limit) {
    if (limit == 0 || limit >= d.size()) return d;
    Dataset out;
    out.sample_shape = d.sample_shape;
    out.num_classes = d.num_classes;
    out.values.assign(d.values.begin(), d.values.begin() + static_cast<std::ptrdiff_t>(limit * d.sample_numel()));
    out.labels.assign(d.labels.begin(), d.labels.begin() + static_cast<std::ptrdiff_t>(limit));
    return out;
}

Tensor hflip(const Tensor& batch) {
    if (batch.rank() != 4) throw DimensionError("hflip expects [B, C, H, W]");
    const std::size_t W = batch.dim(3);
    Tensor out(batch.shape());
    const std::size_t rows = batch.numel() / W;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t w = 0; w < W; ++w) out[r * W + w] = batch[r * W + (W - 1 - w)];
    return out;
}

Tensor pad_crop(const Tensor& batch, std::size_t pad, const std::vector<std::size_t>& dy,
                const std::vector<std::size_t>& dx) {
    if (batch.rank() != 4) throw DimensionError("pad_crop expects [B, C, H, W]");
    const std::size_t B = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
    if (dy.size() != B || dx.size() != B) throw DimensionError("pad_crop: one offset per sample expected");
    Tensor out(batch.shape());
    auto clampi = [](long v, long hi) { return static_cast<std::size_t>(std::clamp(v, 0L, hi)); };
    for (std::size_t b = 0; b < B; ++b) {
        if (dy[b] > 2 * pad || dx[b] > 2 * pad) throw DimensionError("pad_crop: offset exceeds padding");
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t plane = (b * C + c) * H * W;
            for (std::size_t h = 0; h < H; ++h) {
                // Edge padding: coordinates outside the image take the nearest border value.
                const std::size_t sh = clampi(static_cast<long>(h + dy[b]) - static_cast<long>(pad),
                                              static_cast<long>(H) - 1);
                for (std::size_t w = 0; w < W; ++w) {
                    const std::size_t sw = clampi(static_cast<long>(w + dx[b]) - static_cast<long>(pad),
                                                  static_cast<long>(W) - 1);
                    out[plane + h * W + w] = batch[plane + sh * W + sw];
                }
            }
        }
    }
    return out;
}

Tensor augment(const Tensor& batch, const AugmentSpec& spec, Rng& rng) {
    if (!spec.enabled()) return batch;
    if (batch.rank() != 4) throw DimensionError("augment expects [B, C, H, W]");
    const std::size_t B = batch.dim(0);
    const std::size_t per = batch.numel() / B;
    Tensor out = batch;
    if (spec.hflip_prob > 0) {
        std::bernoulli_distribution flip(spec.hflip_prob);
        const Tensor flipped = hflip(batch);
        for (std::size_t b = 0; b < B; ++b) {
            if (flip(rng)) std::copy_n(flipped.raw() + b * per, per, out.raw() + b * per);
        }
    }
    if (spec.crop_pad > 0) {
        std::uniform_int_distribution<std::size_t> off(0, 2 * spec.crop_pad);
        std::vector<std::size_t> dy(B), dx(B);
        for (std::size_t b = 0; b < B; ++b) {
            dy[b] = off(rng);
            dx[b] = off(rng);
        }
        out = pad_crop(out, spec.crop_pad, dy, dx);
    }
    return out;
}

}  // namespace ffebm
