#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tased/archive.hpp"
#include "tased/error.hpp"

namespace tased {
namespace {

using testing::random_tensor;

template <typename Fn>
std::string error_of(Fn fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

Tensor f32_tensor(const Shape& shape, Rng& rng) {
  Tensor t = random_tensor(shape, rng);
  for (double& v : t.data()) v = static_cast<float>(v);
  return t;
}

TEST(ArchiveProperty, RoundTripIsBitExactForF32Values) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<NamedTensor> entries;
    const std::size_t n = rng.below(5);
    for (std::size_t i = 0; i < n; ++i) {
      Shape shape;
      for (std::size_t r = 1 + rng.below(4); r > 0; --r) shape.push_back(1 + rng.below(4));
      entries.push_back({"t" + std::to_string(i), f32_tensor(shape, rng)});
    }
    const std::vector<NamedTensor> back = decode_archive(encode_archive(entries));
    ASSERT_EQ(back.size(), entries.size());
    for (std::size_t i = 0; i < n; ++i) {
      ASSERT_EQ(back[i].name, entries[i].name);
      ASSERT_TRUE(bit_equal(back[i].tensor, entries[i].tensor));
    }
  }
}

TEST(Archive, RejectsTruncationTrailingBytesAndDuplicates) {
  Rng rng(2);
  const std::string bytes = encode_archive({{"a", f32_tensor({2, 3}, rng)}, {"b", f32_tensor({4}, rng)}});
  for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
    ASSERT_THROW(decode_archive(std::string_view(bytes).substr(0, cut)), IoError) << "cut " << cut;
  }
  EXPECT_THROW(decode_archive(bytes + "x"), IoError);
  EXPECT_THROW(encode_archive({{"a", Tensor({1})}, {"a", Tensor({1})}}), IoError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_archive(bad_magic), IoError);
}

TEST(NetworkState, SaveLoadRestoresEveryTensor) {
  testing::TempDir dir("archive");
  ModelConfig c = ModelConfig::tiny(16);
  c.seed = 1;
  Network a(c);
  c.seed = 2;
  Network b(c);
  write_archive(dir / "w.tasd", network_state(a));
  load_network_state(b, read_archive(dir / "w.tasd"));
  const auto sa = network_state(a), sb = network_state(b);
  ASSERT_EQ(sa.size(), sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) ASSERT_TRUE(bit_equal(sa[i].tensor, sb[i].tensor)) << sa[i].name;
}

TEST(NetworkState, ShapeMismatchNamesTheTensor) {
  Network a(ModelConfig::tiny(16));
  std::vector<NamedTensor> entries = network_state(a);
  const std::string name = entries[0].name;
  entries[0].tensor = Tensor({1});
  const std::string msg = error_of([&] { load_network_state(a, entries); });
  EXPECT_NE(msg.find(name), std::string::npos) << msg;
  EXPECT_THROW(load_network_state(a, entries), ShapeError);
}

TEST(NetworkState, MissingAndUnknownEntries) {
  Network a(ModelConfig::tiny(16));
  std::vector<NamedTensor> entries = network_state(a);
  std::vector<NamedTensor> missing(entries.begin() + 1, entries.end());
  EXPECT_THROW(load_network_state(a, missing), IoError);
  EXPECT_NO_THROW(load_network_state(a, missing, {.allow_missing = true}));
  entries.push_back({"decoder.extra", Tensor({1})});
  EXPECT_THROW(load_network_state(a, entries), IoError);
  EXPECT_NO_THROW(load_network_state(a, entries, {.allow_unknown = true}));
  entries.back().name = "optimizer.momentum.decoder.extra";
  EXPECT_NO_THROW(load_network_state(a, entries));
}

TEST(Archive, MissingFileNamesThePath) {
  EXPECT_NE(error_of([] { read_archive("/nonexistent/w.tasd"); }).find("/nonexistent/w.tasd"), std::string::npos);
}

}  // namespace
}  // namespace tased
