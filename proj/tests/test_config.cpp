#include <gtest/gtest.h>

#include "frustumkit/config.hpp"

namespace {

using namespace fk;

TEST(ConfigMap, SectionsAndComments) {
  const auto cm = ConfigMap::parse(
      "# header comment\n"
      "[train]\n"
      "steps = 100   # trailing comment\n"
      "lr = 0.5\n"
      "[model]\n"
      "seg_embed = 8 16 32\n");
  EXPECT_EQ(cm.get_int("train.steps", 0), 100);
  EXPECT_EQ(cm.get_double("train.lr", 0), 0.5);
  const auto v = cm.get_sizes("model.seg_embed", {});
  ASSERT_EQ(v.size(), 3u);
  EXPECT_EQ(v[2], 32u);
}

TEST(ConfigMap, ErrorsAreTyped) {
  EXPECT_THROW(ConfigMap::parse("[train\nsteps = 1\n"), ConfigError);
  EXPECT_THROW(ConfigMap::parse("steps 1\n"), ConfigError);
  const auto cm = ConfigMap::parse("[a]\nx = nope\n");
  EXPECT_THROW(cm.get_double("a.x", 0), ConfigError);
  EXPECT_THROW(cm.get_int("a.x", 0), ConfigError);
  EXPECT_THROW(cm.get_bool("a.x", false), ConfigError);
}

TEST(ExperimentConfig, DefaultsValidate) {
  ExperimentConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.codec.ns(), 8);
  EXPECT_EQ(cfg.codec.nh(), 12);
  EXPECT_EQ(cfg.loss.weights.lambda, 1.0);
  EXPECT_EQ(cfg.loss.weights.gamma, 10.0);
  EXPECT_EQ(cfg.augment.box2d_translate_frac, 0.1);
  EXPECT_EQ(cfg.augment.box2d_scale_min, 0.9);
  EXPECT_EQ(cfg.augment.box2d_scale_max, 1.1);
  EXPECT_EQ(cfg.augment.flip_prob, 0.5);
  EXPECT_EQ(cfg.augment.n_frustum_points, 1024u);
  EXPECT_EQ(cfg.augment.n_mask_points, 512u);
  EXPECT_EQ(cfg.train.lr, 0.001);
}

TEST(ExperimentConfig, WriteParseRoundTrip) {
  ExperimentConfig cfg;
  cfg.train.steps = 321;
  cfg.train.seed = 99;
  cfg.loss.weights.gamma = 2.5;
  cfg.loss.loss_mode = BoxLossMode::ClsReg;
  cfg.loss.anchor_mode = CornerAnchorMode::Literal;
  cfg.model.seg_embed = {16, 16, 32};
  cfg.scene.max_depth = 28.0;
  cfg.augment.frustum_rotation = false;
  cfg.codec.num_heading_bins = 8;

  const ExperimentConfig back = parse_experiment_config(write_experiment_config(cfg));
  EXPECT_EQ(back.train.steps, 321);
  EXPECT_EQ(back.train.seed, 99u);
  EXPECT_EQ(back.loss.weights.gamma, 2.5);
  EXPECT_EQ(back.loss.loss_mode, BoxLossMode::ClsReg);
  EXPECT_EQ(back.loss.anchor_mode, CornerAnchorMode::Literal);
  EXPECT_EQ(back.model.seg_embed, cfg.model.seg_embed);
  EXPECT_EQ(back.scene.max_depth, 28.0);
  EXPECT_FALSE(back.augment.frustum_rotation);
  EXPECT_EQ(back.codec.nh(), 8);
  EXPECT_EQ(back.codec.ns(), cfg.codec.ns());
}

TEST(ExperimentConfig, CodecSectionOverrides) {
  const std::string text =
      "[codec]\n"
      "nh = 6\n"
      "template.0 = 1.5 1.6 3.9 Car\n"
      "template.1 = 1.8 0.6 0.8 Pedestrian\n"
      "ns = 2\n";
  const ExperimentConfig cfg = parse_experiment_config(text);
  EXPECT_EQ(cfg.codec.nh(), 6);
  EXPECT_EQ(cfg.codec.ns(), 2);
  EXPECT_EQ(cfg.codec.size_templates[1].category, "Pedestrian");
}

TEST(ExperimentConfig, NsMismatchRejected) {
  const std::string text =
      "[codec]\n"
      "template.0 = 1.5 1.6 3.9 Car\n"
      "ns = 3\n";
  EXPECT_THROW(parse_experiment_config(text), ConfigError);
}

TEST(ExperimentConfig, InvalidValuesRejected) {
  EXPECT_THROW(parse_experiment_config("[train]\nbatch_size = 0\n"), ConfigError);
  EXPECT_THROW(parse_experiment_config("[train]\nlr = -1\n"), ConfigError);
  EXPECT_THROW(parse_experiment_config("[loss]\ngamma = -2\n"), ConfigError);
  EXPECT_THROW(parse_experiment_config("[loss]\nmode = banana\n"), ConfigError);
  EXPECT_THROW(parse_experiment_config("[scene]\nmin_depth = 50\nmax_depth = 10\n"),
               ConfigError);
}

TEST(CodecConfigFile, StandaloneRoundTrip) {
  BoxCodecConfig cfg;
  cfg.num_heading_bins = 6;
  cfg.size_templates = {{1.5, 1.6, 3.9, "Car"}, {1.8, 0.6, 0.8, "Pedestrian"}};
  const BoxCodecConfig back = parse_codec_config(write_codec_config(cfg));
  EXPECT_EQ(back.nh(), 6);
  EXPECT_EQ(back.ns(), 2);
  EXPECT_EQ(back.size_templates[0].category, "Car");
  EXPECT_EQ(back.size_templates[1].l, 0.8);
}

TEST(CodecConfigFile, NsValidation) {
  EXPECT_THROW(parse_codec_config("ns = 2\nnh = 12\ntemplate.0 = 1 1 1 Car\n"), ConfigError);
  EXPECT_THROW(parse_codec_config("nh = 0\ntemplate.0 = 1 1 1 Car\n"), ConfigError);
}

TEST(ExperimentConfig, BatchNormFlagRoundTrip) {
  ExperimentConfig cfg;
  cfg.model.use_batch_norm = true;
  cfg.model.bn_decay_halve_every = 500;
  const ExperimentConfig back = parse_experiment_config(write_experiment_config(cfg));
  EXPECT_TRUE(back.model.use_batch_norm);
  EXPECT_EQ(back.model.bn_decay_halve_every, 500);
}

TEST(ExperimentConfig, CategoryMixParsing) {
  const ExperimentConfig cfg =
      parse_experiment_config("[scene]\ncategory_mix = Car:0.7 Cyclist:0.3\n");
  ASSERT_EQ(cfg.scene.category_mix.size(), 2u);
  EXPECT_EQ(cfg.scene.category_mix[0].first, "Car");
  EXPECT_EQ(cfg.scene.category_mix[1].second, 0.3);
}

}  // namespace
