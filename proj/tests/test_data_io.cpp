#include <gtest/gtest.h>

#include "relex/builders.hpp"
#include "relex/dataset.hpp"
#include "relex/digest.hpp"
#include "relex/persist.hpp"
#include "relex/train.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace relex;
using testutil::slurp;
using testutil::spit;

namespace {

std::string be32(std::uint32_t v) {
  std::string s;
  for (int sh = 24; sh >= 0; sh -= 8) s.push_back(static_cast<char>((v >> sh) & 0xFF));
  return s;
}

std::string idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols, const std::string& payload,
                       std::uint32_t magic = 0x00000803) {
  return be32(magic) + be32(n) + be32(rows) + be32(cols) + payload;
}

std::string idx_labels(const std::string& labels, std::uint32_t magic = 0x00000801) {
  return be32(magic) + be32(static_cast<std::uint32_t>(labels.size())) + labels;
}

FormatErrc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no FormatError thrown";
  return FormatErrc::io;
}

}  // namespace

TEST(Sha256Test, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(Sha256().update("ab").update("c").hex(), sha256_hex("abc"));
}

TEST(SyntheticTest, EmptyWhenNoSamplesPerClass) {
  SyntheticSpec s;
  s.per_class = 0;
  const auto ds = generate_synthetic(s);
  EXPECT_TRUE(ds.empty());
  EXPECT_EQ(ds.class_count, 4u);
}

TEST(SyntheticTest, DeterministicUnderSeed) {
  SyntheticSpec s;
  s.per_class = 5;
  s.distractor = 0.5;
  const auto a = generate_synthetic(s), b = generate_synthetic(s);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.digest(), b.digest());
  s.seed = 1;
  EXPECT_NE(generate_synthetic(s).digest(), a.digest());
}

TEST(SyntheticTest, ShapeRangeAndBalance) {
  SyntheticSpec s;
  s.classes = 3;
  s.per_class = 7;
  s.side = 5;
  const auto ds = generate_synthetic(s);
  ASSERT_EQ(ds.size(), 21u);
  ds.validate();
  std::vector<int> counts(3, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(ds.images[i].shape(), (Shape{1, 5, 5}));
    ++counts[ds.labels[i].index];
  }
  EXPECT_EQ(counts, (std::vector<int>{7, 7, 7}));
}

TEST(SyntheticTest, RejectsInfeasibleSpecs) {
  SyntheticSpec s;
  s.margin = 0.0;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s = {};
  s.margin = 1.5;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s = {};
  s.classes = 1;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s = {};
  s.side = 2;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
}

TEST(SyntheticTest, DefaultsAreLearnable) {
  SyntheticSpec s;
  s.seed = 1;
  const auto train = generate_synthetic(s);
  s.seed = 2;
  s.per_class = 50;
  const auto test = generate_synthetic(s);
  TrainConfig tc;
  tc.epochs = 15;
  const auto r = train_classifier(train, make_mlp({1, 8, 8}, {32}, 4, 0), tc);
  EXPECT_GT(accuracy(r.model, test), 0.95);
}

TEST(DatasetTest, ValidateAndSlice) {
  SyntheticSpec s;
  s.per_class = 3;
  auto ds = generate_synthetic(s);
  const auto part = ds.slice(2, 5);
  ASSERT_EQ(part.size(), 5u);
  EXPECT_EQ(part.images[0], ds.images[2]);
  EXPECT_EQ(ds.slice(10, 5).size(), 2u);
  EXPECT_TRUE(ds.slice(100, 5).empty());
  ds.labels.pop_back();
  EXPECT_THROW(ds.validate(), ShapeError);
}

TEST(IdxTest, SinglePixelFixture) {
  testutil::TempDir dir;
  std::string px(6, '\0');
  px[4] = static_cast<char>(255);
  spit(dir.file("i"), idx_images(1, 2, 3, px));
  spit(dir.file("l"), idx_labels(std::string(1, '\x01')));
  const auto ds = load_idx(dir.file("i"), dir.file("l"));
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.images[0].shape(), (Shape{1, 2, 3}));
  for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(ds.images[0][k], k == 4 ? 1.0 : 0.0);
  EXPECT_EQ(ds.labels[0], ClassId{1});
}

TEST(IdxTest, TypedErrors) {
  testutil::TempDir dir;
  const std::string i = dir.file("i"), l = dir.file("l");
  spit(i, idx_images(2, 2, 2, std::string(8, '\x10')));
  spit(l, idx_labels("\x01"));
  EXPECT_EQ(code_of([&] { load_idx(i, l); }), FormatErrc::count_mismatch);
  spit(l, idx_labels("\x01\x00", 0x00000803));
  EXPECT_EQ(code_of([&] { load_idx(i, l); }), FormatErrc::bad_magic);
  spit(l, idx_labels(std::string("\x01\x00", 2)));
  spit(i, idx_images(2, 2, 2, std::string(8, '\x10'), 0x00000801));
  EXPECT_EQ(code_of([&] { load_idx(i, l); }), FormatErrc::bad_magic);
  spit(i, idx_images(2, 2, 2, std::string(7, '\x10')));
  EXPECT_EQ(code_of([&] { load_idx(i, l); }), FormatErrc::truncated);
  spit(i, "\x00\x00");
  EXPECT_EQ(code_of([&] { load_idx(i, l); }), FormatErrc::truncated);
  EXPECT_EQ(code_of([&] { load_idx(dir.file("missing"), l); }), FormatErrc::io);
}

TEST(IdxTest, RoundTripAtByteResolution) {
  testutil::TempDir dir;
  SyntheticSpec s;
  s.per_class = 4;
  const auto ds = generate_synthetic(s);
  save_idx(ds, dir.file("i"), dir.file("l"));
  const auto back = load_idx(dir.file("i"), dir.file("l"));
  ASSERT_EQ(back.size(), ds.size());
  EXPECT_EQ(back.labels, ds.labels);
  for (std::size_t n = 0; n < ds.size(); ++n)
    for (std::size_t k = 0; k < ds.images[n].numel(); ++k) EXPECT_NEAR(back.images[n][k], ds.images[n][k], 0.5 / 255 + 1e-12);
  save_idx(back, dir.file("i2"), dir.file("l2"));
  EXPECT_EQ(slurp(dir.file("i")), slurp(dir.file("i2")));
  EXPECT_EQ(slurp(dir.file("l")), slurp(dir.file("l2")));
}

TEST(ModelIoTest, RoundTripIsBitExact) {
  testutil::TempDir dir;
  for (std::uint64_t k = 0; k < 6; ++k) {
    const Model m = oracle::random_net(k);
    const std::string a = dir.file("a.rlxm"), b = dir.file("b.rlxm");
    save_model(m, a);
    const Model back = load_model(a);
    save_model(back, b);
    EXPECT_EQ(slurp(a), slurp(b));
    Rng rng(k);
    const Tensor x = random_normal(m.input_shape(), 1.0, rng);
    EXPECT_EQ(forward(m, x), forward(back, x));
  }
}

TEST(ModelIoTest, CorruptionIsDetected) {
  const std::string bytes = encode_model(oracle::random_net(1));
  std::string bad = bytes;
  bad[bad.size() - 3] ^= 0x01;
  EXPECT_EQ(code_of([&] { decode_model(bad); }), FormatErrc::digest_mismatch);
  EXPECT_EQ(code_of([&] { decode_model(bytes.substr(0, bytes.size() - 8)); }), FormatErrc::truncated);
  EXPECT_EQ(code_of([&] { decode_model(bytes.substr(0, 10)); }), FormatErrc::truncated);
  std::string ver = bytes;
  ver.replace(ver.find(" 1\n"), 3, " 9\n");
  EXPECT_EQ(code_of([&] { decode_model(ver); }), FormatErrc::version_mismatch);
  EXPECT_EQ(code_of([&] { decode_model("GARBAGE\n"); }), FormatErrc::bad_magic);
  EXPECT_EQ(code_of([&] { decode_saliency(bytes); }), FormatErrc::bad_magic);
  EXPECT_EQ(code_of([&] { decode_model(bytes + "x"); }), FormatErrc::malformed_header);
}

TEST(SaliencyIoTest, RoundTripAndPgm) {
  testutil::TempDir dir;
  Rng rng(3);
  const SaliencyMap m(random_uniform({1, 4, 5}, 0, 1, rng));
  save_saliency(m, "relex", "d1g", dir.file("m.rsal"));
  const auto back = load_saliency(dir.file("m.rsal"));
  EXPECT_EQ(back.map, m);
  EXPECT_EQ(back.method, "relex");
  EXPECT_EQ(back.config_digest, "d1g");
  EXPECT_EQ(encode_saliency(back.map, back.method, back.config_digest), slurp(dir.file("m.rsal")));

  const SaliencyMap tiny(Tensor({1, 1, 4}, std::vector<double>{0.0, 0.5, 1.0, 1.5 / 255}));
  const std::string pgm = encode_pgm(tiny);
  EXPECT_EQ(pgm.substr(0, 11), "P5\n4 1\n255\n");
  EXPECT_EQ(static_cast<unsigned char>(pgm[11]), 0);
  EXPECT_EQ(static_cast<unsigned char>(pgm[12]), 128);  // 127.5 rounds up
  EXPECT_EQ(static_cast<unsigned char>(pgm[13]), 255);
  EXPECT_EQ(static_cast<unsigned char>(pgm[14]), 2);
}

TEST(SaliencyIoTest, OutOfRangePayloadRejected) {
  std::string bytes = encode_saliency(SaliencyMap::ones({2}), "x", "d");
  // Rewrite the payload to 2.0 and fix up the digest so only the range check fires.
  std::string head = bytes.substr(0, bytes.find("payload_sha256"));
  std::string body;
  for (int i = 0; i < 2; ++i) detail::append_le(body, 2.0);
  bytes = head + "payload_sha256 " + Sha256().update(head).update(body).hex() + "\nend\n" + body;
  EXPECT_EQ(code_of([&] { decode_saliency(bytes); }), FormatErrc::malformed_header);
}

TEST(AdvSetIoTest, RoundTrip) {
  testutil::TempDir dir;
  AdversarialSet a;
  a.source = "abc";
  a.attack = "pgd";
  a.attack_config = "epsilon=0.1 steps=40";
  a.seed = 7;
  Rng rng(1);
  for (std::size_t i = 0; i < 3; ++i) {
    a.ids.push_back(10 + i);
    a.labels.push_back(ClassId{i});
    a.samples.push_back(random_uniform({1, 3, 3}, 0, 1, rng));
  }
  save_adv_set(a, dir.file("a.rlxa"));
  const auto b = load_adv_set(dir.file("a.rlxa"));
  EXPECT_EQ(b.source, a.source);
  EXPECT_EQ(b.attack, a.attack);
  EXPECT_EQ(b.attack_config, a.attack_config);
  EXPECT_EQ(b.seed, a.seed);
  EXPECT_EQ(b.ids, a.ids);
  EXPECT_EQ(b.labels, a.labels);
  EXPECT_EQ(b.samples, a.samples);
  EXPECT_EQ(encode_adv_set(b), slurp(dir.file("a.rlxa")));

  std::string bad = slurp(dir.file("a.rlxa"));
  bad[bad.size() - 1] ^= 0x20;
  EXPECT_EQ(code_of([&] { decode_adv_set(bad); }), FormatErrc::digest_mismatch);
}

TEST(AdvSetIoTest, EmptySet) {
  AdversarialSet a;
  a.attack = "pgd";
  const auto b = decode_adv_set(encode_adv_set(a));
  EXPECT_TRUE(b.samples.empty());
}
