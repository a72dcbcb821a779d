#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "ncd/idx.hpp"

using namespace ncd;

namespace {

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("ncd_idx_" + name);
}

std::string be(std::uint32_t v) {
    std::string s;
    for (int i = 3; i >= 0; --i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    return s;
}

}  // namespace

TEST(Idx, RoundTripThreeImages) {
    Dataset ds;
    ds.shape = ImageShape{1, 2, 3};
    ds.num_classes = 3;
    ds.labels = {2, 0, 1};
    ds.images = Tensor({3, 1, 2, 3});
    for (std::size_t i = 0; i < ds.images.size(); ++i) ds.images[i] = static_cast<double>(i * 10) / 255.0;
    const auto ip = temp_path("img"), lp = temp_path("lab");
    write_idx(ds, ip, lp);
    const Dataset back = read_idx(ip, lp);
    EXPECT_EQ(back.size(), 3u);
    EXPECT_EQ(back.labels, ds.labels);
    EXPECT_EQ(back.shape, ds.shape);
    EXPECT_EQ(back.num_classes, 3u);
    for (std::size_t i = 0; i < ds.images.size(); ++i) EXPECT_NEAR(back.images[i], ds.images[i], 1e-12);
    std::filesystem::remove(ip);
    std::filesystem::remove(lp);
}

TEST(Idx, WrongMagicIsParseErrorAtZero) {
    const std::string bytes = be(0x0803) + be(0);
    try {
        parse_idx_labels(bytes);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.offset(), 0u);
    }
    EXPECT_THROW(parse_idx_images(be(0x0801) + be(0) + be(1) + be(1)), ParseError);
}

TEST(Idx, DeclaredCountMustMatchPayload) {
    EXPECT_THROW(parse_idx_labels(be(kIdxLabelMagic) + be(3) + std::string(2, '\1')), ParseError);
    EXPECT_THROW(parse_idx_labels(be(kIdxLabelMagic) + be(3) + std::string(4, '\1')), ParseError);
    EXPECT_THROW(parse_idx_images(be(kIdxImageMagic) + be(2) + be(2) + be(2) + std::string(7, '\0')), ParseError);
    EXPECT_EQ(parse_idx_images(be(kIdxImageMagic) + be(2) + be(2) + be(2) + std::string(8, '\0')).count, 2u);
}

TEST(Idx, TruncatedHeader) {
    EXPECT_THROW(parse_idx_images(be(kIdxImageMagic) + be(1)), ParseError);
    EXPECT_THROW(parse_idx_labels(std::string(3, '\0')), ParseError);
}

TEST(Idx, CapPerClassKeepsFileOrder) {
    Dataset ds;
    ds.shape = ImageShape{1, 1, 1};
    ds.num_classes = 2;
    ds.labels = {0, 1, 0, 0, 1};
    ds.images = Tensor({5, 1, 1, 1}, std::vector<double>{0, 1, 2, 3, 4});
    const Dataset c = cap_per_class(ds, 1);
    EXPECT_EQ(c.labels, (std::vector<int>{0, 1}));
    EXPECT_EQ(c.images[1], 1.0);
}
