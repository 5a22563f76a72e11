#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "hivae/container.hpp"

using namespace hivae;
namespace fs = std::filesystem;

namespace {

fs::path tmp(const std::string& name) {
  fs::path d = fs::temp_directory_path() / "hivae_test_container";
  fs::create_directories(d);
  return d / name;
}

std::string error_of(const fs::path& p) {
  try {
    container::read(p);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Container, Float32RoundTripIsBitwise) {
  Rng rng(1);
  Array a = rng.normal_array({2, 3, 4});
  for (double& v : a.data) v = static_cast<double>(static_cast<float>(v));  // representable values
  container::File f;
  f.add(container::Entry::from_array("a", a));
  f.meta["note"] = "hello";
  container::write(tmp("f32.hvae"), f);
  auto g = container::read(tmp("f32.hvae"));
  EXPECT_EQ(g.at("a").to_array(), a);
  EXPECT_EQ(g.meta["note"], "hello");
}

TEST(Container, UInt8RoundTripIsBitwise) {
  Array a({5}, Buffer{0, 1, 127, 128, 255});
  container::File f;
  f.add(container::Entry::from_array("u", a, container::DType::UInt8));
  container::write(tmp("u8.hvae"), f);
  auto g = container::read(tmp("u8.hvae"));
  EXPECT_EQ(g.at("u").dtype, container::DType::UInt8);
  EXPECT_EQ(g.at("u").to_array(), a);
}

TEST(Container, MultipleTensorsKeepOrderAndNames) {
  container::File f;
  f.add(container::Entry::from_array("x", Array({2}, 1.0)));
  f.add(container::Entry::from_array("y", Array({3, 1}, 2.0)));
  container::write(tmp("multi.hvae"), f);
  auto g = container::read(tmp("multi.hvae"));
  ASSERT_EQ(g.tensors.size(), 2u);
  EXPECT_EQ(g.tensors[0].name, "x");
  EXPECT_EQ(g.at("y").shape, (Shape{3, 1}));
  EXPECT_TRUE(g.has("x"));
  EXPECT_FALSE(g.has("z"));
  EXPECT_THROW(g.at("z"), FormatError);
}

TEST(Container, HeaderOnlyReadReturnsShapes) {
  container::File f;
  f.add(container::Entry::from_array("big", Array({4, 8, 8})));
  container::write(tmp("hdr.hvae"), f);
  auto h = container::read_header(tmp("hdr.hvae"));
  ASSERT_EQ(h.tensors.size(), 1u);
  EXPECT_EQ(h.tensors[0].shape, (Shape{4, 8, 8}));
  EXPECT_EQ(h.tensors[0].nbytes, 4u * 8 * 8 * 4);
  // header parses even when the payload is cut off
  fs::resize_file(tmp("hdr.hvae"), h.payload_offset + 10);
  EXPECT_NO_THROW(container::read_header(tmp("hdr.hvae")));
}

TEST(Container, LayoutMatchesDocumentedPreamble) {
  container::File f;
  f.add(container::Entry::from_array("v", Array({1}, 1.0)));
  container::write(tmp("layout.hvae"), f);
  std::ifstream is(tmp("layout.hvae"), std::ios::binary);
  std::vector<unsigned char> b((std::istreambuf_iterator<char>(is)), {});
  ASSERT_GE(b.size(), 20u);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "HVAE");
  EXPECT_EQ(b[4], 1);
  std::uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i) hlen |= static_cast<std::uint64_t>(b[8 + i]) << (8 * i);
  EXPECT_EQ(b.size(), 16 + hlen + 4);
  // float32 1.0 little endian: 00 00 80 3f
  EXPECT_EQ(b[b.size() - 2], 0x80);
  EXPECT_EQ(b[b.size() - 1], 0x3f);
}

TEST(Container, TruncatedPayloadNamesByteCounts) {
  container::File f;
  f.add(container::Entry::from_array("v", Array({10})));
  container::write(tmp("trunc.hvae"), f);
  fs::resize_file(tmp("trunc.hvae"), fs::file_size(tmp("trunc.hvae")) - 8);
  const std::string msg = error_of(tmp("trunc.hvae"));
  EXPECT_NE(msg.find("expected 40"), std::string::npos) << msg;
  EXPECT_NE(msg.find("got 32"), std::string::npos) << msg;
}

TEST(Container, CorruptMagicIsFormatError) {
  container::File f;
  f.add(container::Entry::from_array("v", Array({1})));
  container::write(tmp("magic.hvae"), f);
  {
    std::fstream s(tmp("magic.hvae"), std::ios::binary | std::ios::in | std::ios::out);
    s.write("XVAE", 4);
  }
  EXPECT_NE(error_of(tmp("magic.hvae")).find("bad magic"), std::string::npos);
}

TEST(Container, ShortFileAndMissingFile) {
  {
    std::ofstream os(tmp("short.hvae"), std::ios::binary);
    os << "HV";
  }
  EXPECT_THROW(container::read(tmp("short.hvae")), FormatError);
  EXPECT_THROW(container::read(tmp("does_not_exist.hvae")), FormatError);
}
