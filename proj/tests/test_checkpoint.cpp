#include <gtest/gtest.h>

#include <fstream>

#include "support.hpp"

namespace mdt {
namespace {

TEST(Checkpoint, RoundTripRestoresIdenticalLogits) {
  auto cfg = testing::tiny_config();
  MdtModel<float> a(cfg);
  cfg.init_seed = 99;
  MdtModel<float> b(cfg);
  auto in = make_input(testing::make_discussion("f", testing::sample_tree_records()), testing::tiny_tokenizer(), cfg);
  auto opt = make_optimizer_state(a.params());
  opt.step = 7;
  opt.first_moment[0][0] = 0.25f;

  auto path = testing::scratch_dir("ckpt") / "m.ckpt";
  save_checkpoint(make_checkpoint(a, {{"config", "hidden=8"}, {"vocab", "alpha\nbeta"}}, &opt), path);
  auto ck = load_checkpoint(path);
  ASSERT_NE(ck.find_meta("vocab"), nullptr);
  EXPECT_EQ(*ck.find_meta("vocab"), "alpha\nbeta");
  EXPECT_EQ(ck.find_meta("missing"), nullptr);
  ASSERT_TRUE(ck.optimizer);
  EXPECT_EQ(ck.optimizer->step, 7u);
  EXPECT_EQ(ck.optimizer->first_moment[0][0], 0.25f);

  EXPECT_NE(a.forward(in).data()[0], b.forward(in).data()[0]);
  apply_checkpoint(b, ck);
  const auto la = a.forward(in), lb = b.forward(in);
  EXPECT_TRUE(std::equal(la.data().begin(), la.data().end(), lb.data().begin()));
}

TEST(Checkpoint, EncodingIsStable) {
  MdtModel<float> m(testing::tiny_config());
  const auto ck = make_checkpoint(m, {{"k", "v"}});
  const auto bytes = encode_checkpoint(ck);
  EXPECT_EQ(encode_checkpoint(decode_checkpoint(bytes)), bytes);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 7), "MDTCKPT");
}

TEST(Checkpoint, TruncationAndTrailingBytesRejected) {
  MdtModel<float> m(testing::tiny_config());
  const auto bytes = encode_checkpoint(make_checkpoint(m, {}));
  for (std::size_t cut : {std::size_t{3}, std::size_t{9}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(decode_checkpoint(part), FormatError) << cut;
  }
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(decode_checkpoint(extra), FormatError);
}

TEST(Checkpoint, BadMagicAndVersion) {
  MdtModel<float> m(testing::tiny_config());
  auto bytes = encode_checkpoint(make_checkpoint(m, {}));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
  bad = bytes;
  bad[8] = 2;
  try {
    decode_checkpoint(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
  }
}

TEST(Checkpoint, MissingFileNamesPath) {
  try {
    load_checkpoint("/nonexistent/x.ckpt");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(std::string(e.what()), "checkpoint not found: /nonexistent/x.ckpt");
  }
}

TEST(Checkpoint, ShapeMismatchOnApply) {
  auto cfg = testing::tiny_config();
  MdtModel<float> small(cfg);
  cfg.hidden = 12;
  cfg.ffn_hidden = 24;
  MdtModel<float> big(cfg);
  EXPECT_THROW(apply_checkpoint(big, make_checkpoint(small, {})), DataError);
}

}  // namespace
}  // namespace mdt
