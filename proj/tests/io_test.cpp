#include <gtest/gtest.h>

#include <filesystem>
#include <string>
#include <vector>

#include "pfseg/geometry.hpp"
#include "pfseg/io.hpp"
#include "pfseg/random.hpp"

namespace pfseg {
namespace {

std::string expect_format_error(const std::string& bytes) {
  try {
    decode_netpbm(bytes);
  } catch (const FormatError& e) {
    return e.what();
  }
  ADD_FAILURE() << "no FormatError";
  return {};
}

TEST(Netpbm, SixteenBitGrayRoundTripIsBigEndian) {
  Image img(3, 2, 1, 65535);
  img.pixels = {0, 1, 256, 65535, 1234, 4321};
  const std::string bytes = encode_netpbm(img);
  EXPECT_EQ(bytes.substr(0, 13), "P5\n3 2\n65535\n");
  EXPECT_EQ(bytes.size(), 13u + 12u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[13 + 4]), 0x01);  // 256 -> 01 00
  EXPECT_EQ(static_cast<unsigned char>(bytes[13 + 5]), 0x00);
  const Image back = decode_netpbm(bytes);
  EXPECT_EQ(back.pixels, img.pixels);
  EXPECT_EQ(back.maxval, 65535u);
}

TEST(Netpbm, ColourRoundTripAndComments) {
  Image img(2, 2, 3, 255);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint16_t>(i * 20);
  const Image back = decode_netpbm(encode_netpbm(img));
  EXPECT_EQ(back.channels, 3u);
  EXPECT_EQ(back.pixels, img.pixels);
  const Image commented = decode_netpbm(std::string("P5 # note\n2 # w\n1\n255\n") + "\x07\x09");
  EXPECT_EQ(commented.pixels, (std::vector<std::uint16_t>{7, 9}));
}

TEST(Netpbm, HeaderErrorsNameByteOffsets) {
  EXPECT_NE(expect_format_error("P3\n1 1\n255\n0").find("byte offset 0"), std::string::npos);
  EXPECT_NE(expect_format_error("P5\nx 1\n255\n0").find("byte offset 3"), std::string::npos);
  EXPECT_NE(expect_format_error("P5\n1 1\n70000\n0").find("byte offset 7"), std::string::npos);
  EXPECT_NE(expect_format_error("P5\n0 1\n255\n").find("byte offset 3"), std::string::npos);
  EXPECT_NE(expect_format_error("P5\n2 2\n255\n\x01").find("byte offset 11"), std::string::npos);
  EXPECT_NE(expect_format_error("P5\n1 1\n10\n\x0b").find("exceeds maxval"), std::string::npos);
}

TEST(KeyValue, ParseGetAndErrors) {
  const KeyValueFile kv = KeyValueFile::parse("# intrinsics\nfx 50\nfy 51.5 # comment\n\ncx 31.5\n");
  EXPECT_EQ(kv.get_double("fx"), 50.0);
  EXPECT_EQ(kv.get_double("fy"), 51.5);
  EXPECT_EQ(kv.keys(), (std::vector<std::string>{"fx", "fy", "cx"}));
  try {
    kv.get("cy");
    ADD_FAILURE();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("cy"), std::string::npos);
  }
  EXPECT_THROW(KeyValueFile::parse("a 1 2\n"), FormatError);
  EXPECT_THROW(KeyValueFile::parse("a 1\na 2\n"), FormatError);
  EXPECT_THROW(KeyValueFile::parse("a one\n").get_double("a"), FormatError);
  const KeyValueFile again = KeyValueFile::parse(kv.str());
  EXPECT_EQ(again.str(), kv.str());
}

TEST(Formats, DepthMillimetreRoundTrip) {
  Rng rng(1);
  std::vector<double> z(12);
  for (auto& v : z) v = std::round(rng.uniform(0.3, 9.0) * 1000.0) / 1000.0;
  z[3] = 0.0;
  const DepthMap d = DepthMap::from_meters(4, 3, z);
  const DepthMap back = DepthMap::from_millimeters(decode_netpbm(encode_netpbm(d.to_millimeters())));
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_EQ(back.valid(i), d.valid(i));
    EXPECT_NEAR(back.z(i), z[i], 1e-12);
  }
}

TEST(Formats, NormalsPpmAndSidecarFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "pfseg_io_test";
  std::filesystem::create_directories(dir);
  const CameraIntrinsics k{20.0, 20.0, 7.5, 5.5};
  std::vector<double> z(16 * 12);
  for (std::size_t v = 0; v < 12; ++v)
    for (std::size_t u = 0; u < 16; ++u) z[v * 16 + u] = 2.0 + 0.05 * double(u);
  const NormalMap n = encode_normals(DepthMap::from_meters(16, 12, z), k, {});
  write_netpbm((dir / "n.ppm").string(), n.to_ppm());
  write_f64_sidecar((dir / "n.f64").string(), n.to_sidecar());
  const Image ppm = read_netpbm((dir / "n.ppm").string());
  const NormalMap exact = NormalMap::from_sidecar(16, 12, read_f64_sidecar((dir / "n.f64").string()));
  EXPECT_EQ(exact.normals, n.normals);
  EXPECT_EQ(exact.valid, n.valid);
  for (std::size_t i = 0; i < n.normals.size(); ++i)
    for (std::size_t c = 0; c < 3; ++c)
      EXPECT_LE(std::abs(decode_normal_component(ppm.pixels[i * 3 + c]) - n.normals[i][c]), 1.0 / 255.0 + 1e-12);
  EXPECT_THROW(read_netpbm((dir / "missing.pgm").string()), FormatError);
  std::filesystem::remove_all(dir);
}

TEST(Formats, IntrinsicsFromKeyValues) {
  const auto k = CameraIntrinsics::from_key_values(KeyValueFile::parse("fx 50\nfy 50\ncx 31.5\ncy 31.5\n"));
  EXPECT_EQ(k.cx, 31.5);
  EXPECT_THROW(CameraIntrinsics::from_key_values(KeyValueFile::parse("fx 50\nfy 50\ncx 31.5\n")), FormatError);
  EXPECT_THROW(k.validate(16, 16), ConfigError);
}

}  // namespace
}  // namespace pfseg
