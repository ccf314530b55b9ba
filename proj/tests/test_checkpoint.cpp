#include <gtest/gtest.h>

#include <fstream>

#include "copi/checkpoint.hpp"
#include "testing_util.hpp"

using copi::Matrix;
using copi::Network;
using copi::Rng;
using namespace copi_test;

namespace {

Network sample_net(bool feedback) {
    Rng rng(77);
    copi::InitSpec spec;
    spec.feedback = feedback;
    Network net = copi::build_network(rng, {7, 5, 4, 3}, copi::Activation::leaky_relu(0.1), spec);
    // make the parameters less structured than their init
    Rng nrng(78);
    for (auto& l : net.layers) {
        copi::add_scaled(l.W, 0.3, copi::rand_matrix(nrng, l.W.rows, l.W.cols, copi::Uniform{-1, 1}));
        copi::add_scaled(l.R, 0.1, copi::rand_matrix(nrng, l.R.rows, l.R.cols, copi::Uniform{-1, 1}));
    }
    return net;
}

void expect_same_network(const Network& a, const Network& b) {
    ASSERT_EQ(a.depth(), b.depth());
    for (std::size_t l = 0; l < a.depth(); ++l) {
        expect_bitwise_equal(a.layers[l].W, b.layers[l].W, "W");
        expect_bitwise_equal(a.layers[l].R, b.layers[l].R, "R");
        EXPECT_EQ(a.layers[l].activation.kind, b.layers[l].activation.kind);
        EXPECT_EQ(a.layers[l].activation.slope, b.layers[l].activation.slope);
    }
    ASSERT_EQ(a.feedback.size(), b.feedback.size());
    for (std::size_t l = 0; l < a.feedback.size(); ++l)
        expect_bitwise_equal(a.feedback[l], b.feedback[l], "feedback");
}

} // namespace

TEST(Checkpoint, RoundTripPlain) {
    TempDir tmp;
    const Network net = sample_net(false);
    copi::save_network(tmp.file("net.copi"), net);
    const Network back = copi::load_network(tmp.file("net.copi"));
    expect_same_network(net, back);
}

TEST(Checkpoint, RoundTripWithFeedback) {
    TempDir tmp;
    const Network net = sample_net(true);
    copi::save_network(tmp.file("net.copi"), net);
    const Network back = copi::load_network(tmp.file("net.copi"));
    expect_same_network(net, back);
}

TEST(Checkpoint, MagicBytesLeadTheFile) {
    TempDir tmp;
    copi::save_network(tmp.file("net.copi"), sample_net(false));
    std::ifstream in(tmp.file("net.copi"), std::ios::binary);
    char head[4];
    in.read(head, 4);
    EXPECT_EQ(std::string(head, 4), "COPI");
}

TEST(Checkpoint, CorruptedByteFailsCrc) {
    TempDir tmp;
    const std::string path = tmp.file("net.copi");
    copi::save_network(path, sample_net(false));
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(100);
        char c;
        f.seekg(100);
        f.get(c);
        f.seekp(100);
        f.put(static_cast<char>(c ^ 0x40));
    }
    EXPECT_THROW(copi::load_network(path), copi::FormatError);
}

TEST(Checkpoint, BadMagicNamed) {
    TempDir tmp;
    const std::string path = tmp.file("bad.copi");
    // valid CRC over an invalid magic: exercise the magic check, not the CRC
    copi::io::Sink s;
    for (char c : {'N', 'O', 'P', 'E'}) s.u8(static_cast<std::uint8_t>(c));
    s.u32(1);
    copi::io::write_file(path, s);
    try {
        copi::load_network(path);
        FAIL() << "expected FormatError";
    } catch (const copi::FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
    }
}

TEST(Checkpoint, TruncatedFileNamed) {
    TempDir tmp;
    const std::string path = tmp.file("net.copi");
    copi::save_network(path, sample_net(false));
    // drop the tail: CRC no longer matches
    std::vector<char> bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    }
    bytes.resize(bytes.size() / 2);
    {
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    EXPECT_THROW(copi::load_network(path), copi::FormatError);
}

TEST(Checkpoint, MissingFileThrows) {
    EXPECT_THROW(copi::load_network("/nonexistent/net.copi"), copi::FormatError);
}
