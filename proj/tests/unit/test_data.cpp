#include "ffebm/data.hpp"
#include "ffebm/error.hpp"
#include "helpers.hpp"

#include <gtest/gtest.h>

using namespace ffebm;
using ffebm::test::random_tensor;

namespace {

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
}

std::vector<std::uint8_t> idx_images(std::uint32_t count, std::uint32_t rows, std::uint32_t cols) {
    std::vector<std::uint8_t> b;
    put_be32(b, 0x803);
    put_be32(b, count);
    put_be32(b, rows);
    put_be32(b, cols);
    for (std::uint32_t i = 0; i < count * rows * cols; ++i) b.push_back(static_cast<std::uint8_t>(i * 37 % 256));
    return b;
}

std::vector<std::uint8_t> idx_labels(std::vector<std::uint8_t> labels) {
    std::vector<std::uint8_t> b;
    put_be32(b, 0x801);
    put_be32(b, static_cast<std::uint32_t>(labels.size()));
    b.insert(b.end(), labels.begin(), labels.end());
    return b;
}

}  // namespace

TEST(Mnist, ParsesIdxPairAndNormalizes) {
    const Dataset d = parse_mnist_idx(idx_images(3, 2, 2), idx_labels({7, 0, 9}));
    EXPECT_EQ(d.size(), 3u);
    EXPECT_EQ(d.sample_shape, (Shape{1, 2, 2}));
    EXPECT_EQ(d.labels, (Labels{7, 0, 9}));
    for (std::size_t i = 0; i < 12; ++i) {
        const Scalar pixel = static_cast<Scalar>(i * 37 % 256);
        EXPECT_NEAR(d.values[i], (pixel / 255.0 - 0.1307) / 0.3081, 1e-12);
    }
    const Tensor b = d.batch({2, 0}, {4});
    EXPECT_EQ(b.shape(), (Shape{2, 4}));
    EXPECT_EQ(b[0], d.values[8]);
    EXPECT_THROW(d.batch({0}, {3}), DimensionError);
    EXPECT_THROW(d.batch({3}), DataError);
}

TEST(Mnist, FullIntensityPixelNormalizesToKnownValue) {
    std::vector<std::uint8_t> img;
    put_be32(img, 0x803);
    put_be32(img, 1);
    put_be32(img, 1);
    put_be32(img, 1);
    img.push_back(255);
    EXPECT_NEAR(parse_mnist_idx(img, idx_labels({1})).values[0], (1.0 - 0.1307) / 0.3081, 1e-12);
}

TEST(Mnist, MalformedFilesAreRejected) {
    auto img = idx_images(2, 2, 2);
    auto lab = idx_labels({1, 2});
    auto bad = img;
    bad[3] = 0x04;
    EXPECT_THROW(parse_mnist_idx(bad, lab), FormatError);
    EXPECT_THROW(parse_mnist_idx(img, idx_labels({1, 2, 3})), FormatError);
    EXPECT_THROW(parse_mnist_idx(std::vector<std::uint8_t>(img.begin(), img.end() - 1), lab), FormatError);
    EXPECT_THROW(parse_mnist_idx(std::vector<std::uint8_t>(img.begin(), img.begin() + 10), lab), FormatError);
    EXPECT_THROW(parse_mnist_idx(img, idx_labels({1, 12})), DataError);
    EXPECT_THROW(load_mnist_idx("/nonexistent", "train"), DataError);
    EXPECT_THROW(load_mnist_idx("/nonexistent", "dev"), ConfigError);
}

TEST(Cifar10, ParsesChannelMajorRecords) {
    std::vector<std::uint8_t> bytes;
    for (std::uint8_t label : {3, 8}) {
        bytes.push_back(label);
        for (std::size_t i = 0; i < 3072; ++i) bytes.push_back(static_cast<std::uint8_t>(i / 1024 * 100));
    }
    const Dataset d = parse_cifar10_binary(bytes);
    EXPECT_EQ(d.size(), 2u);
    EXPECT_EQ(d.labels, (Labels{3, 8}));
    EXPECT_EQ(d.sample_shape, (Shape{3, 32, 32}));
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_NEAR(d.values[3072 + c * 1024 + 5], (c * 100 / 255.0 - kCifar10Mean[c]) / kCifar10Std[c], 1e-12);
    }
}

TEST(Cifar10, MalformedFilesAreRejected) {
    EXPECT_THROW(parse_cifar10_binary(std::vector<std::uint8_t>(3072, 0)), FormatError);
    std::vector<std::uint8_t> bad(3073, 0);
    bad[0] = 10;
    EXPECT_THROW(parse_cifar10_binary(bad), FormatError);
    EXPECT_TRUE(parse_cifar10_binary({}).values.empty());
    EXPECT_THROW(load_cifar10_binary("/nonexistent", "train"), DataError);
}

TEST(SyntheticBlobs, DeterministicBalancedLabels) {
    const Dataset a = synthetic_blobs(30, 4, 3, 4.0, 5), b = synthetic_blobs(30, 4, 3, 4.0, 5);
    EXPECT_EQ(a.values, b.values);
    for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(a.labels[i], i % 3);
    EXPECT_NE(synthetic_blobs(30, 4, 3, 4.0, 6).values, a.values);
    EXPECT_THROW(synthetic_blobs(3, 4, 1, 1.0, 0), ConfigError);
    EXPECT_EQ(take(a, 10).size(), 10u);
    EXPECT_EQ(take(a, 0).size(), 30u);
}

TEST(Augment, FlipIsAnInvolution) {
    Rng rng(51);
    const Tensor x = random_tensor({2, 3, 4, 5}, rng);
    EXPECT_EQ(hflip(hflip(x)), x);
    EXPECT_EQ(hflip(x)[4], x[0]);
    EXPECT_THROW(hflip(random_tensor({2, 3}, rng)), DimensionError);
}

TEST(Augment, CenteredCropIsIdentityAndShiftsUseEdgeValues) {
    Rng rng(52);
    const Tensor x = random_tensor({2, 1, 4, 4}, rng);
    EXPECT_EQ(pad_crop(x, 2, {2, 2}, {2, 2}), x);
    const Tensor shifted = pad_crop(x, 1, {0, 0}, {1, 1});
    // dy = 0 reads one row above: row 0 repeats the top edge.
    EXPECT_EQ(shifted[0], x[0]);
    EXPECT_EQ(shifted[4], x[0]);
    EXPECT_EQ(shifted[5], x[1]);
    EXPECT_THROW(pad_crop(x, 1, {3, 0}, {0, 0}), DimensionError);
}

TEST(Augment, SameSeedSameBatch) {
    Rng data_rng(53);
    const Tensor x = random_tensor({6, 3, 8, 8}, data_rng);
    const AugmentSpec spec{0.5, 2};
    Rng r1(7), r2(7);
    EXPECT_EQ(augment(x, spec, r1), augment(x, spec, r2));
    Rng r3(7);
    EXPECT_EQ(augment(x, AugmentSpec{}, r3), x);
}
