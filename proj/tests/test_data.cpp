#include <gtest/gtest.h>

#include <cstdint>
#include <fstream>

#include "copi/data.hpp"
#include "testing_util.hpp"

using copi::Dataset;
using copi::Matrix;
using copi::Rng;
using namespace copi_test;

namespace {

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back(static_cast<unsigned char>(x >> 24));
    v.push_back(static_cast<unsigned char>(x >> 16));
    v.push_back(static_cast<unsigned char>(x >> 8));
    v.push_back(static_cast<unsigned char>(x));
}

/// n images of h x w with constant pixel value, plus matching labels.
void write_idx_fixture(const std::string& img_path, const std::string& lab_path, std::uint32_t n,
                       std::uint32_t h, std::uint32_t w, unsigned char pixel,
                       const std::vector<unsigned char>& labels) {
    std::vector<unsigned char> img;
    push_be32(img, 0x00000803);
    push_be32(img, n);
    push_be32(img, h);
    push_be32(img, w);
    img.insert(img.end(), std::size_t(n) * h * w, pixel);
    write_bytes(img_path, img);

    std::vector<unsigned char> lab;
    push_be32(lab, 0x00000801);
    push_be32(lab, n);
    lab.insert(lab.end(), labels.begin(), labels.end());
    write_bytes(lab_path, lab);
}

} // namespace

TEST(LoadMnist, SinglePixelFixtureScalesToOne) {
    TempDir tmp;
    write_idx_fixture(tmp.file("img"), tmp.file("lab"), 1, 2, 2, 255, {3});
    const Dataset ds = copi::load_mnist(tmp.file("img"), tmp.file("lab"));
    EXPECT_EQ(ds.dim(), 4u);
    EXPECT_EQ(ds.n_samples(), 1u);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(ds.features(i, 0), 1.0);
    for (std::size_t c = 0; c < 10; ++c) EXPECT_EQ(ds.labels(c, 0), c == 3 ? 1.0 : 0.0);
}

TEST(LoadMnist, ZeroPixelScalesToZero) {
    TempDir tmp;
    write_idx_fixture(tmp.file("img"), tmp.file("lab"), 2, 1, 3, 0, {0, 9});
    const Dataset ds = copi::load_mnist(tmp.file("img"), tmp.file("lab"));
    for (double v : ds.features.data) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(ds.labels(0, 0), 1.0);
    EXPECT_EQ(ds.labels(9, 1), 1.0);
}

TEST(LoadMnist, WrongMagicNamesField) {
    TempDir tmp;
    std::vector<unsigned char> img;
    push_be32(img, 0x00000802); // wrong
    push_be32(img, 1);
    push_be32(img, 1);
    push_be32(img, 1);
    img.push_back(0);
    write_bytes(tmp.file("img"), img);
    write_idx_fixture(tmp.file("img2"), tmp.file("lab"), 1, 1, 1, 0, {1});
    try {
        copi::load_mnist(tmp.file("img"), tmp.file("lab"));
        FAIL() << "expected FormatError";
    } catch (const copi::FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
    }
}

TEST(LoadMnist, CountMismatchRejected) {
    TempDir tmp;
    write_idx_fixture(tmp.file("img"), tmp.file("lab"), 2, 1, 1, 0, {1, 2});
    write_idx_fixture(tmp.file("img3"), tmp.file("lab3"), 3, 1, 1, 0, {1, 2, 3});
    EXPECT_THROW(copi::load_mnist(tmp.file("img"), tmp.file("lab3")), copi::FormatError);
}

TEST(LoadMnist, TruncatedPixelsRejected) {
    TempDir tmp;
    std::vector<unsigned char> img;
    push_be32(img, 0x00000803);
    push_be32(img, 2);
    push_be32(img, 2);
    push_be32(img, 2);
    img.insert(img.end(), 5, 0); // needs 8
    write_bytes(tmp.file("img"), img);
    write_idx_fixture(tmp.file("imgx"), tmp.file("lab"), 2, 1, 1, 0, {1, 2});
    EXPECT_THROW(copi::load_mnist(tmp.file("img"), tmp.file("lab")), copi::FormatError);
}

TEST(LoadMnist, RealFilesHaveCanonicalShapes) {
    if (!mnist_available()) GTEST_SKIP() << "MNIST files not present under " << data_dir();
    const std::string d = data_dir() + "/mnist/";
    const Dataset train = copi::load_mnist(d + "train-images-idx3-ubyte", d + "train-labels-idx1-ubyte");
    EXPECT_EQ(train.dim(), 784u);
    EXPECT_EQ(train.n_samples(), 60000u);
    const Dataset test = copi::load_mnist(d + "t10k-images-idx3-ubyte", d + "t10k-labels-idx1-ubyte");
    EXPECT_EQ(test.n_samples(), 10000u);
    for (double v : test.features.data) {
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
    }
    // every label column is one-hot
    for (std::size_t j = 0; j < 200; ++j) {
        double s = 0;
        for (std::size_t i = 0; i < 10; ++i) s += train.labels(i, j);
        ASSERT_EQ(s, 1.0);
    }
}

TEST(LoadCifar10, SingleRecordFixture) {
    TempDir tmp;
    std::vector<unsigned char> rec(3073, 0);
    rec[0] = 9;          // label
    rec[1] = 255;        // first pixel
    write_bytes(tmp.file("batch.bin"), rec);
    const Dataset ds = copi::load_cifar10({tmp.file("batch.bin")});
    EXPECT_EQ(ds.n_samples(), 1u);
    EXPECT_EQ(ds.dim(), 3072u);
    EXPECT_EQ(ds.labels(9, 0), 1.0);
    EXPECT_EQ(ds.features(0, 0), 1.0);
    EXPECT_EQ(ds.features(1, 0), 0.0);
}

TEST(LoadCifar10, MultipleFilesConcatenate) {
    TempDir tmp;
    std::vector<unsigned char> two(2 * 3073, 0);
    two[0] = 1;
    two[3073] = 2;
    std::vector<unsigned char> one(3073, 0);
    one[0] = 3;
    write_bytes(tmp.file("b1.bin"), two);
    write_bytes(tmp.file("b2.bin"), one);
    const Dataset ds = copi::load_cifar10({tmp.file("b1.bin"), tmp.file("b2.bin")});
    EXPECT_EQ(ds.n_samples(), 3u);
    EXPECT_EQ(ds.labels(1, 0), 1.0);
    EXPECT_EQ(ds.labels(2, 1), 1.0);
    EXPECT_EQ(ds.labels(3, 2), 1.0);
}

TEST(LoadCifar10, BadLengthRejected) {
    TempDir tmp;
    write_bytes(tmp.file("b.bin"), std::vector<unsigned char>(3072, 0));
    EXPECT_THROW(copi::load_cifar10({tmp.file("b.bin")}), copi::FormatError);
}

TEST(SynthGaussian, DeterministicForFixedSeed) {
    Rng a(5), b(5);
    const Dataset d1 = copi::synth_gaussian(a, 6, 10);
    const Dataset d2 = copi::synth_gaussian(b, 6, 10);
    expect_bitwise_equal(d1.features, d2.features);
}

TEST(SynthGaussian, SampleCovarianceConvergesToSpec) {
    // Sigma = A A^T + eps I is known exactly; with N = 100000 every entry of
    // the sample covariance lands within 0.05.
    Rng rng(11);
    const std::size_t dim = 5, n = 100000;
    const copi::CovSpec spec{1.0, 0.1};
    const Dataset ds = copi::synth_gaussian(rng, dim, n, spec);

    Rng check(11);
    Rng a_rng = check.split(1);
    const Matrix a = copi::rand_matrix(a_rng, dim, dim, copi::Uniform{-1.0, 1.0});
    Matrix sigma = copi::matmul_nt(a, a);
    for (std::size_t i = 0; i < dim; ++i) sigma(i, i) += spec.epsilon;

    const Matrix sample = copi::outer_mean(ds.features, ds.features);
    EXPECT_LT(copi::max_abs_diff(sample, sigma), 0.05);
}

TEST(SynthGaussian, IdentityCovarianceOffdiagShrinks) {
    // eps-dominated spec with tiny A: off-diagonal sample correlations decay
    // like 1/sqrt(N).
    Rng rng(13);
    copi::CovSpec spec;
    spec.a_range = 1e-6;
    spec.epsilon = 1.0;
    const Dataset ds = copi::synth_gaussian(rng, 4, 50000, spec);
    const Matrix c = copi::outer_mean(ds.features, ds.features);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            if (i != j) {
                EXPECT_LT(std::abs(c(i, j)), 0.03);
            }
        }
}

TEST(Batches, ExactCover) {
    Rng rng(1);
    Dataset ds;
    ds.features = copi::rand_matrix(rng, 3, 100, copi::Uniform{0, 1});
    const copi::BatchPlan plan = copi::make_batch_plan(7, 1, 100, 50);
    const auto range = copi::batches(ds, plan);
    ASSERT_EQ(range.n_batches(), 2u);
    EXPECT_EQ(range.batch(0).first.cols, 50u);
    EXPECT_EQ(range.batch(1).first.cols, 50u);
}

TEST(Batches, RemainderBatchEmitted) {
    Rng rng(1);
    Dataset ds;
    ds.features = copi::rand_matrix(rng, 2, 101, copi::Uniform{0, 1});
    const copi::BatchPlan plan = copi::make_batch_plan(7, 1, 101, 50);
    const auto range = copi::batches(ds, plan);
    ASSERT_EQ(range.n_batches(), 3u);
    EXPECT_EQ(range.batch(2).first.cols, 1u);
}

TEST(Batches, SameSeedSameSequence) {
    const copi::BatchPlan p1 = copi::make_batch_plan(9, 4, 64, 16);
    const copi::BatchPlan p2 = copi::make_batch_plan(9, 4, 64, 16);
    EXPECT_EQ(p1.order, p2.order);
    EXPECT_EQ(p1.epoch_seed, p2.epoch_seed);
    const copi::BatchPlan p3 = copi::make_batch_plan(9, 5, 64, 16);
    EXPECT_NE(p1.order, p3.order);
}

TEST(Batches, OrderIsATruePermutation) {
    const copi::BatchPlan plan = copi::make_batch_plan(123, 9, 257, 32);
    std::vector<std::size_t> seen = plan.order;
    std::sort(seen.begin(), seen.end());
    for (std::size_t i = 0; i < seen.size(); ++i) ASSERT_EQ(seen[i], i);
}

TEST(Batches, RoundTripReconstructsDataset) {
    Rng rng(3);
    Dataset ds;
    ds.features = copi::rand_matrix(rng, 4, 53, copi::Uniform{-1, 1});
    ds.labels = Matrix(10, 53);
    for (std::size_t j = 0; j < 53; ++j) ds.labels(j % 10, j) = 1.0;

    const copi::BatchPlan plan = copi::make_batch_plan(3, 2, 53, 8);
    const auto range = copi::batches(ds, plan);
    Matrix rebuilt_f(4, 53);
    Matrix rebuilt_l(10, 53);
    std::size_t col = 0;
    for (std::size_t b = 0; b < range.n_batches(); ++b) {
        const auto [f, l] = range.batch(b);
        for (std::size_t j = 0; j < f.cols; ++j, ++col) {
            const std::size_t src = plan.order[col];
            for (std::size_t i = 0; i < 4; ++i) rebuilt_f(i, src) = f(i, j);
            for (std::size_t i = 0; i < 10; ++i) rebuilt_l(i, src) = l(i, j);
        }
    }
    expect_bitwise_equal(rebuilt_f, ds.features, "features round trip");
    expect_bitwise_equal(rebuilt_l, ds.labels, "labels round trip");
}

TEST(Batches, ZeroBatchSizeRejected) {
    EXPECT_THROW(copi::make_batch_plan(1, 1, 10, 0), copi::ContractError);
    EXPECT_THROW(copi::make_batch_plan(1, 1, 10, 11), copi::ContractError);
}

TEST(Subset, TakesLeadingColumns) {
    Rng rng(2);
    Dataset ds;
    ds.features = copi::rand_matrix(rng, 3, 10, copi::Uniform{0, 1});
    ds.labels = Matrix(2, 10);
    for (std::size_t j = 0; j < 10; ++j) ds.labels(j % 2, j) = 1.0;
    const Dataset s = copi::subset(ds, 4);
    EXPECT_EQ(s.n_samples(), 4u);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(s.features(i, j), ds.features(i, j));
}
