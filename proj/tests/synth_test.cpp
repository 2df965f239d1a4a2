#include <algorithm>

#include <gtest/gtest.h>

#include "adafer/annotate.hpp"
#include "adafer/au_index.hpp"
#include "adafer/synth.hpp"
#include "adafer/trainer.hpp"

using namespace adafer;

namespace {

TrainConfig source_only(std::size_t epochs) {
  TrainConfig tc;
  tc.beta = 0.0;
  tc.epsilon = 0.0;
  tc.epochs = epochs;
  tc.batch_size = 64;
  tc.hidden_dim = 32;
  return tc;
}

double source_only_target_accuracy(const SynthConfig& sc, std::size_t epochs) {
  const auto d = generate(sc);
  const auto r = train(d.source, d.target, {}, {}, source_only(epochs));
  return evaluate(r.params, d.target).accuracy;
}

}  // namespace

TEST(SynthTest, FlipRateMatchesConfig) {
  for (double rate : {0.0, 0.05, 0.2}) {
    SynthConfig sc;
    sc.au_flip_rate = rate;
    sc.seed = 5;
    const auto d = generate(sc);
    std::size_t flipped = 0, bits = 0;
    for (const Dataset* ds : {&d.source, &d.target}) {
      for (const auto& s : ds->samples()) {
        const AuCode& t = d.meta.templates[*EvalAccess::label_of(s)];
        for (std::size_t k = 0; k < sc.K; ++k) flipped += s.au_code.test(k) != t.test(k);
        bits += sc.K;
      }
    }
    EXPECT_NEAR(static_cast<double>(flipped) / static_cast<double>(bits), rate, 0.02) << rate;
  }
}

TEST(SynthTest, TemplatesRecoverableFromSourceStatistics) {
  SynthConfig sc;
  sc.seed = 2;
  const auto d = generate(sc);
  const auto dist = au_class_distribution(d.source);
  for (std::size_t c = 0; c < sc.C; ++c) {
    const AuCode& t = d.meta.templates[c];
    const auto ranked = dist.ranked_aus(c);
    for (std::size_t i = 0; i < t.count(); ++i) EXPECT_TRUE(t.test(ranked[i])) << "class " << c;
  }
}

TEST(SynthTest, ScoresStayOnTheirSideOfOneHalf) {
  SynthConfig sc;
  sc.n_source = 200;
  sc.n_target = 200;
  const auto d = generate(sc);
  for (const auto& s : d.source.samples()) {
    EXPECT_GE(s.au_scores.minCoeff(), 0.0);
    EXPECT_LE(s.au_scores.maxCoeff(), 1.0);
  }
  for (double noise : {0.05, 0.3}) {
    sc.au_score_noise = noise;
    double off = 0.0;
    std::size_t n = 0;
    const auto noisy = generate(sc);
    for (const auto& s : noisy.source.samples()) {
      for (double v : s.au_scores) {
        off += std::min(v, 1.0 - v);
        ++n;
      }
    }
    EXPECT_NEAR(off / static_cast<double>(n), noise, 0.02);
  }
}

TEST(SynthTest, NoShiftMeansNoGap) {
  SynthConfig sc;
  sc.feature_shift = 0.0;
  sc.label_prior_skew = 0.0;
  sc.n_source = 1000;
  sc.n_target = 1000;
  sc.seed = 4;
  const auto d = generate(sc);
  EXPECT_TRUE(d.meta.rotation.isIdentity(1e-12));
  EXPECT_EQ(d.meta.translation.norm(), 0.0);
  const auto r = train(d.source, d.target, {}, {}, source_only(15));
  const double src_acc = evaluate(r.params, d.source).accuracy;
  const double tgt_acc = evaluate(r.params, d.target).accuracy;
  EXPECT_LT(std::abs(src_acc - tgt_acc), 0.03);
}

TEST(SynthTest, NoFlipsGiveOneHotSoftLabels) {
  SynthConfig sc;
  sc.au_flip_rate = 0.0;
  sc.n_source = 300;
  sc.n_target = 300;
  const auto d = generate(sc);
  const auto ann = annotate_all(d.source, d.target);
  for (std::size_t i = 0; i < ann.size(); ++i) {
    ASSERT_TRUE(ann[i].t_soft.has_value());
    const auto truth = *EvalAccess::label_of(d.target.samples()[i]);
    EXPECT_EQ((*ann[i].t_soft)[static_cast<Eigen::Index>(truth)], 1.0);
    EXPECT_EQ(ann[i].s_hard, truth);
  }
}

TEST(SynthTest, DescribeIsDeterministic) {
  SynthConfig sc;
  sc.n_source = 50;
  sc.n_target = 50;
  const auto a = describe(generate(sc).meta);
  EXPECT_EQ(a, describe(generate(sc).meta));
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 8);
  const auto meta = generate(sc).meta;
  for (const auto& t : meta.templates) {
    EXPECT_GE(t.count(), 2u);
    EXPECT_LE(t.count(), 4u);
  }
  sc.seed = 1;
  EXPECT_NE(a, describe(generate(sc).meta));
}

TEST(SynthTest, PriorsAndLabels) {
  SynthConfig sc;
  sc.label_prior_skew = 0.0;
  const auto d = generate(sc);
  for (Eigen::Index c = 0; c < 7; ++c) EXPECT_DOUBLE_EQ(d.meta.target_prior[c], 1.0 / 7.0);
  std::vector<std::size_t> counts(7, 0);
  for (const auto& s : d.source.samples()) {
    ++counts[*s.label];
    EXPECT_EQ(s.au_code.size(), 17u);
  }
  EXPECT_LE(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()), 1u);
  for (const auto& s : d.target.samples()) EXPECT_FALSE(s.label.has_value());
}

TEST(SynthTest, Validation) {
  auto bad = [](auto tweak) {
    SynthConfig sc;
    tweak(sc);
    return sc;
  };
  EXPECT_THROW(generate(bad([](SynthConfig& s) { s.C = 1; })), std::invalid_argument);
  EXPECT_THROW(generate(bad([](SynthConfig& s) { s.au_flip_rate = 0.6; })), std::invalid_argument);
  EXPECT_THROW(generate(bad([](SynthConfig& s) { s.au_score_noise = 0.5; })), std::invalid_argument);
  EXPECT_THROW(generate(bad([](SynthConfig& s) { s.n_target = 3; })), std::invalid_argument);
  try {
    generate(bad([](SynthConfig& s) {
      s.K = 2;
      s.C = 3;
    }));
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "synth: K too small for C distinct templates");
  }
}

TEST(SynthTest, LargerShiftHurtsSourceOnly) {
  std::vector<double> mean;
  for (double shift : {0.0, 1.0, 2.0}) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      SynthConfig sc;
      sc.feature_shift = shift;
      sc.n_source = 500;
      sc.n_target = 500;
      sc.seed = seed;
      total += source_only_target_accuracy(sc, 10);
    }
    mean.push_back(total / 5.0);
  }
  EXPECT_GT(mean[0], mean[1]);
  EXPECT_GT(mean[1], mean[2]);
}

TEST(SynthTest, NoiselessSourceIsSeparable) {
  SynthConfig sc;
  sc.feature_noise = 0.0;
  sc.n_source = 350;
  sc.n_target = 350;
  const auto d = generate(sc);
  const auto r = train(d.source, d.target, {}, {}, source_only(10));
  EXPECT_EQ(evaluate(r.params, d.source).accuracy, 1.0);
}
