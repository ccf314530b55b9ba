#include <gtest/gtest.h>

#include <fstream>

#include "copi/analysis.hpp"
#include "copi/learning.hpp"
#include "testing_util.hpp"

using copi::Activation;
using copi::Dataset;
using copi::Matrix;
using copi::Network;
using copi::Rng;
using namespace copi_test;

// ---- offdiag_norm -----------------------------------------------------------

TEST(OffdiagNorm, DecorrelatedBatchIsZero) {
    const Matrix x{{1, 1}, {1, -1}};
    EXPECT_EQ(copi::offdiag_norm(x), 0.0);
}

TEST(OffdiagNorm, HandArithmetic) {
    const Matrix x{{1}, {2}};
    EXPECT_EQ(copi::offdiag_norm(x), 8.0);
}

TEST(OffdiagNorm, InvariantToSampleOrder) {
    Rng rng(5);
    const Matrix x = copi::rand_matrix(rng, 4, 7, copi::Uniform{-1, 1});
    Matrix perm(4, 7);
    const std::size_t order[7] = {6, 2, 0, 4, 5, 1, 3};
    for (std::size_t j = 0; j < 7; ++j)
        for (std::size_t i = 0; i < 4; ++i) perm(i, j) = x(i, order[j]);
    EXPECT_NEAR(copi::offdiag_norm(x), copi::offdiag_norm(perm), 1e-12);
}

// ---- fit_readout ------------------------------------------------------------

TEST(FitReadout, HandArithmeticOrthogonalRows) {
    const Matrix x{{1, 1}, {1, -1}};
    const Matrix y{{2, 0}};
    const copi::LinearReadout r = copi::fit_readout(x, y);
    expect_near(r.B, Matrix{{1, 1}}, 0.0);
    expect_bitwise_equal(copi::matmul(r.B, x), y, "B X == Y exactly");
}

TEST(FitReadout, IdentityMapForUnitPowerRows) {
    const Matrix x{{1, 1}, {1, -1}};
    const copi::LinearReadout r = copi::fit_readout(x, x);
    expect_near(r.B, Matrix::identity(2), 0.0);
}

TEST(FitReadout, MatchesExplicitInverseOlsOnOrthogonalRows) {
    Rng rng(9);
    for (int t = 0; t < 10; ++t) {
        const std::size_t d = 3 + t, n = d + 10;
        Matrix x = orthonormal_rows(rng, d, n);
        for (std::size_t i = 0; i < d; ++i) { // random row powers
            const double s = rng.uniform(0.5, 3.0);
            for (std::size_t j = 0; j < n; ++j) x(i, j) *= s;
        }
        const Matrix y = copi::rand_matrix(rng, 4, n, copi::Uniform{-1, 1});
        const copi::LinearReadout r = copi::fit_readout(x, y);
        const Matrix ols = ols_explicit(x, y);
        EXPECT_LT(copi::frobenius_norm(r.B - ols), 1e-8) << "trial " << t;
    }
}

TEST(FitReadout, DeadRowsGiveZeroColumns) {
    const Matrix x{{1, -1}, {0, 0}};
    const Matrix y{{1, 1}};
    const copi::LinearReadout r = copi::fit_readout(x, y);
    EXPECT_EQ(r.dead_inputs, 1u);
    EXPECT_EQ(r.B(0, 1), 0.0);
    EXPECT_EQ(r.fit_diag[1], 0.0);
}

TEST(FitReadout, WarnsOnCorrelatedInputsViaRatioField) {
    Rng rng(10);
    Matrix x(3, 50);
    for (std::size_t j = 0; j < 50; ++j) {
        const double v = rng.uniform(-1, 1);
        x(0, j) = v;
        x(1, j) = v;               // perfectly correlated pair
        x(2, j) = rng.uniform(-1, 1);
    }
    const Matrix y = copi::rand_matrix(rng, 2, 50, copi::Uniform{-1, 1});
    const copi::LinearReadout r = copi::fit_readout(x, y);
    EXPECT_GT(r.decorr_ratio, 0.1);
}

// ---- feature maps -----------------------------------------------------------

TEST(FeatureMaps, RecoverWOnDecorrelatedLinearModel) {
    // Single linear layer on decorrelated data: a = W x, so the fitted map
    // equals W up to the sampling imperfection of the decorrelation.
    Rng rng(21);
    const std::size_t d = 6, n = 4000;
    Dataset ds;
    ds.features = Matrix(d, n);
    Rng nrng(22);
    for (double& v : ds.features.data) v = 0.5 * nrng.normal(); // independent rows
    Network net;
    copi::Layer layer;
    layer.W = copi::rand_matrix(rng, 3, d, copi::Uniform{-1, 1});
    layer.R = Matrix::identity(d);
    layer.activation = Activation::identity();
    net.layers.push_back(layer);

    const auto maps = copi::feature_maps(net, ds, {1});
    ASSERT_EQ(maps.size(), 1u);
    EXPECT_LT(rel_frobenius_diff(maps[0].B, net.layers[0].W), 1e-1);
    // and on exactly-orthogonal inputs the recovery is tight
    Rng orng(23);
    Dataset ortho;
    ortho.features = whitened_batch(orng, d, 64);
    const auto maps2 = copi::feature_maps(net, ortho, {1}, /*chunk=*/64);
    EXPECT_LT(rel_frobenius_diff(maps2[0].B, net.layers[0].W), 1e-6);
}

TEST(FeatureMaps, ZeroNetworkGivesZeroMaps) {
    Rng rng(24);
    Network net = copi::build_network(rng, {5, 4, 3});
    for (auto& l : net.layers) l.W = Matrix(l.W.rows, l.W.cols);
    Dataset ds;
    Rng drng(25);
    ds.features = copi::rand_matrix(drng, 5, 40, copi::Uniform{0, 1});
    const auto maps = copi::feature_maps(net, ds, {1, 2});
    for (const auto& m : maps)
        for (double v : m.B.data) EXPECT_EQ(v, 0.0);
}

TEST(FeatureMaps, LayerIndexOutOfRangeThrows) {
    Rng rng(26);
    const Network net = copi::build_network(rng, {5, 4, 3});
    Dataset ds;
    Rng drng(27);
    ds.features = copi::rand_matrix(drng, 5, 10, copi::Uniform{0, 1});
    EXPECT_THROW(copi::feature_maps(net, ds, {3}), copi::ContractError);
    EXPECT_THROW(copi::feature_maps(net, ds, {0}), copi::ContractError);
}

// ---- compress ----------------------------------------------------------------

namespace {

Dataset labeled_gaussians(Rng& rng, std::size_t dim, std::size_t classes, std::size_t n) {
    Dataset ds = make_blobs(rng, dim, classes, n);
    return ds;
}

} // namespace

TEST(Compress, KeepAllIsBitwiseIdentity) {
    Rng rng(31);
    const Network net = copi::build_network(rng, {6, 5, 4, 3});
    Rng drng(32);
    const Dataset ds = labeled_gaussians(drng, 6, 3, 60);
    const copi::CompressedNetwork cnet = copi::compress(net, ds, net.depth());
    EXPECT_FALSE(cnet.has_readout);

    Matrix xb(6, 60);
    for (std::size_t j = 0; j < 60; ++j)
        for (std::size_t i = 0; i < 6; ++i) xb(i, j) = ds.features(i, j);
    const auto states = copi::forward(net, xb);
    expect_bitwise_equal(copi::predict(cnet, xb), states.back().y, "keep-all predictions");
    const auto [acc, loss] = copi::evaluate(net, ds, copi::LossKind::Quadratic);
    EXPECT_EQ(copi::evaluate_compressed(cnet, ds), acc);
}

TEST(Compress, ExactOnLinearIdentityActivationNetworks) {
    // Identity activations make every span a composition of linear maps, and
    // orthogonal-row weights on whitened input keep every layer's activity
    // decorrelated, so the fitted replacement is lossless.
    Rng rng(33);
    const std::vector<std::size_t> dims{8, 6, 4, 3};
    Network net = copi::build_network(rng, dims, Activation::identity());
    Rng orng(34);
    for (std::size_t l = 0; l < net.depth(); ++l) {
        Matrix w = orthonormal_rows(orng, dims[l + 1], dims[l]);
        const double s = 0.5 + 0.5 * static_cast<double>(l); // per-layer scale
        for (double& v : w.data) v *= s;
        net.layers[l].W = std::move(w);
        net.layers[l].R = Matrix::identity(dims[l]);
    }

    Dataset ds;
    Rng drng(35);
    ds.features = whitened_batch(drng, 8, 400);

    Matrix xb = ds.features;
    const auto states = copi::forward(net, xb);
    for (std::size_t keep = 0; keep < net.depth(); ++keep) {
        const copi::CompressedNetwork cnet = copi::compress(net, ds, keep, /*chunk=*/400);
        const Matrix approx = copi::predict(cnet, xb);
        EXPECT_LT(rel_frobenius_diff(approx, states.back().a), 1e-8) << "keep " << keep;
    }
}

TEST(Compress, OutOfRangeThrows) {
    Rng rng(36);
    const Network net = copi::build_network(rng, {4, 3, 2});
    Dataset ds;
    Rng drng(37);
    ds.features = copi::rand_matrix(drng, 4, 10, copi::Uniform{0, 1});
    EXPECT_THROW(copi::compress(net, ds, 3u + 1u), copi::ContractError);
}

TEST(Compress, RoundTripsThroughCheckpoint) {
    TempDir tmp;
    Rng rng(38);
    Network net = copi::build_network(rng, {6, 5, 3});
    Rng drng(39);
    const Dataset ds = labeled_gaussians(drng, 6, 3, 80);
    const copi::CompressedNetwork cnet = copi::compress(net, ds, 1);
    copi::save_compressed(tmp.file("c.copi"), cnet);
    const copi::CompressedNetwork back = copi::load_compressed(tmp.file("c.copi"));

    ASSERT_EQ(back.keep_layers(), 1u);
    ASSERT_TRUE(back.has_readout);
    expect_bitwise_equal(back.readout.B, cnet.readout.B, "readout B");
    expect_bitwise_equal(back.r_next, cnet.r_next, "readout R");
    Matrix xb(6, 80);
    for (std::size_t j = 0; j < 80; ++j)
        for (std::size_t i = 0; i < 6; ++i) xb(i, j) = ds.features(i, j);
    expect_bitwise_equal(copi::predict(back, xb), copi::predict(cnet, xb), "predictions");
}

TEST(Compress, ZeroKeepRoundTripsThroughCheckpoint) {
    TempDir tmp;
    Rng rng(40);
    Network net = copi::build_network(rng, {6, 5, 3});
    Rng drng(41);
    const Dataset ds = labeled_gaussians(drng, 6, 3, 80);
    const copi::CompressedNetwork cnet = copi::compress(net, ds, 0);
    EXPECT_EQ(cnet.keep_layers(), 0u);
    copi::save_compressed(tmp.file("c0.copi"), cnet);
    const copi::CompressedNetwork back = copi::load_compressed(tmp.file("c0.copi"));
    Matrix xb(6, 80);
    for (std::size_t j = 0; j < 80; ++j)
        for (std::size_t i = 0; i < 6; ++i) xb(i, j) = ds.features(i, j);
    expect_bitwise_equal(copi::predict(back, xb), copi::predict(cnet, xb));
}

TEST(Compress, PlainCheckpointLoadsAsUncompressed) {
    TempDir tmp;
    Rng rng(42);
    const Network net = copi::build_network(rng, {4, 3, 2});
    copi::save_network(tmp.file("n.copi"), net);
    const copi::CompressedNetwork cnet = copi::load_compressed(tmp.file("n.copi"));
    EXPECT_FALSE(cnet.has_readout);
    EXPECT_EQ(cnet.keep_layers(), 2u);
    // and the readout-bearing file is rejected by the plain loader
    Rng drng(43);
    Dataset ds;
    ds.features = copi::rand_matrix(drng, 4, 20, copi::Uniform{0, 1});
    copi::save_compressed(tmp.file("c.copi"), copi::compress(net, ds, 1));
    EXPECT_THROW(copi::load_network(tmp.file("c.copi")), copi::FormatError);
}

// ---- pgm ---------------------------------------------------------------------

TEST(Pgm, GridGeometryAndSeparators) {
    Matrix maps(5, 4); // 5 tiles of 2x2 -> 3-column grid, 2 rows, 1px separators
    for (std::size_t i = 0; i < maps.size(); ++i) maps.data[i] = static_cast<double>(i) - 8.0;
    const copi::PgmImage img = copi::tile_grid(maps, 2, 2, 100);
    EXPECT_EQ(img.width, 8u);
    EXPECT_EQ(img.height, 5u);
    EXPECT_EQ(img.pixels.size(), img.width * img.height);
}

TEST(Pgm, SignedScaleCentersZeroAt128) {
    Matrix maps(1, 4);
    maps.data = {0.0, 1.0, -1.0, 0.5};
    const copi::PgmImage img = copi::tile_grid(maps, 2, 2, 1);
    EXPECT_EQ(img.pixels[0], 128);
    EXPECT_EQ(img.pixels[1], 255);
    EXPECT_EQ(img.pixels[2], 1); // 128 - 127
    EXPECT_EQ(img.pixels[3], 128 + 64);
}

TEST(Pgm, FileHasP5HeaderAndPayload) {
    TempDir tmp;
    Matrix maps(4, 9);
    Rng rng(50);
    for (double& v : maps.data) v = rng.uniform(-1, 1);
    const copi::PgmImage img = copi::tile_grid(maps, 3, 3, 4);
    copi::write_pgm(tmp.file("grid.pgm"), img, {"test grid"});

    std::ifstream in(tmp.file("grid.pgm"), std::ios::binary);
    std::string magic;
    in >> magic;
    EXPECT_EQ(magic, "P5");
    std::string rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    EXPECT_NE(rest.find("# test grid"), std::string::npos);
    EXPECT_GE(rest.size(), img.pixels.size());
}
