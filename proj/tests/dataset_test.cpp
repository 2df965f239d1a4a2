#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "adafer/dataset.hpp"
#include "support.hpp"

using namespace adafer;
namespace t = adafer::testing;

namespace {

void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

const char* kHeader = R"({"D":4,"K":3,"C":2,"class_names":["a","b"]})";

std::string record(int id, const char* domain, const char* scores, const char* label) {
  return std::string(R"({"id":)") + std::to_string(id) + R"(,"domain":")" + domain +
         R"(","features":[0.1,0.2,0.3,0.4],"au_scores":)" + scores + R"(,"label":)" + label + "}";
}

std::string error_of(const std::filesystem::path& p) {
  try {
    load_dataset(p);
  } catch (const DatasetError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(AuCodeTest, BinarizeExamples) {
  EXPECT_EQ(binarize(Eigen::Vector3d(0.9, 0.3, 0.5)).to_string(), "101");
  EXPECT_EQ(binarize(Eigen::Vector3d::Zero()).to_string(), "000");
  EXPECT_EQ(binarize(Eigen::VectorXd::Constant(1, 0.49999)).to_string(), "0");
}

TEST(AuCodeTest, BinarizeIsStableAndRejectsBadInput) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd s(70);
    for (auto& v : s) v = u(rng);
    const AuCode a = binarize(s);
    EXPECT_EQ(a, binarize(s));
    for (Eigen::Index k = 0; k < s.size(); ++k) EXPECT_EQ(a.test(static_cast<std::size_t>(k)), s[k] >= 0.5);
  }
  EXPECT_THROW(binarize(Eigen::Vector2d(0.2, 1.5)), std::invalid_argument);
  EXPECT_THROW(binarize(Eigen::Vector2d(0.2, 0.5), 0.0), std::invalid_argument);
}

TEST(AuCodeTest, HammingAndStrings) {
  const auto a = AuCode::from_string("0110");
  const auto b = AuCode::from_string("1111");
  EXPECT_EQ(a.hamming(b), 2u);
  EXPECT_EQ(a.count(), 2u);
  EXPECT_EQ(a.to_string(), "0110");
  EXPECT_THROW(a.hamming(AuCode::from_string("01")), std::invalid_argument);
}

TEST(DatasetTest, LoadsThreeValidLines) {
  const auto dir = t::temp_dir("load3");
  write(dir / "d.jsonl", std::string(kHeader) + "\n" + record(1, "source", "[0.9,0.1,0.6]", "0") + "\n" +
                             record(2, "source", "[0.2,0.7,0.1]", "1") + "\n" +
                             record(3, "target", "[0.9,0.1,0.6]", "1") + "\n");
  const Dataset d = load_dataset(dir / "d.jsonl");
  ASSERT_EQ(d.size(), 3u);
  EXPECT_EQ(d.dims(), (Dims{4, 3, 2}));
  EXPECT_EQ(d.at(1).au_code.to_string(), "101");
  EXPECT_EQ(d.at(1).label, std::optional<ClassId>(0));
  // The target label is kept, but only behind EvalAccess.
  EXPECT_FALSE(d.at(3).label.has_value());
  EXPECT_EQ(EvalAccess::label_of(d.at(3)), std::optional<ClassId>(1));
}

TEST(DatasetTest, ValidationErrorsCarryLineNumbers) {
  const auto dir = t::temp_dir("errors");
  write(dir / "range.jsonl", std::string(kHeader) + "\n" + record(1, "source", "[0.9,0.1,0.6]", "0") + "\n" +
                                 record(2, "source", "[1.2,0.1,0.6]", "0") + "\n");
  EXPECT_EQ(error_of(dir / "range.jsonl"), "line 3: au_score out of range");

  write(dir / "empty.jsonl", "");
  EXPECT_EQ(error_of(dir / "empty.jsonl"), "empty dataset");

  write(dir / "header_only.jsonl", std::string(kHeader) + "\n");
  EXPECT_EQ(error_of(dir / "header_only.jsonl"), "empty dataset");

  write(dir / "dup.jsonl", std::string(kHeader) + "\n" + record(1, "source", "[0.9,0.1,0.6]", "0") + "\n" +
                               record(1, "source", "[0.9,0.1,0.6]", "0") + "\n");
  EXPECT_EQ(error_of(dir / "dup.jsonl"), "line 3: duplicate id 1");

  write(dir / "nolabel.jsonl", std::string(kHeader) + "\n" + record(4, "source", "[0.9,0.1,0.6]", "null") + "\n");
  EXPECT_EQ(error_of(dir / "nolabel.jsonl"), "line 2: source sample 4 missing label");

  write(dir / "dim.jsonl", std::string(kHeader) + "\n" + record(1, "source", "[0.9,0.1]", "0") + "\n");
  EXPECT_NE(error_of(dir / "dim.jsonl").find("line 2: dimension mismatch"), std::string::npos);

  write(dir / "junk.jsonl", std::string(kHeader) + "\n{not json\n");
  EXPECT_NE(error_of(dir / "junk.jsonl").find("line 2: malformed line"), std::string::npos);

  write(dir / "label.jsonl", std::string(kHeader) + "\n" + record(1, "source", "[0.9,0.1,0.6]", "5") + "\n");
  EXPECT_EQ(error_of(dir / "label.jsonl"), "line 2: label 5 out of range");

  EXPECT_THROW(load_dataset(dir / "missing.jsonl"), std::runtime_error);
}

TEST(DatasetTest, ExpectedDimsAreEnforced) {
  const auto dir = t::temp_dir("dims");
  write(dir / "d.jsonl", std::string(kHeader) + "\n" + record(1, "source", "[0.9,0.1,0.6]", "0") + "\n");
  EXPECT_NO_THROW(load_dataset(dir / "d.jsonl", Dims{4, 3, 2}));
  EXPECT_THROW(load_dataset(dir / "d.jsonl", Dims{4, 3, 3}), DatasetError);
}

TEST(DatasetTest, ConstructorRejectsInvalidSamples) {
  std::vector<Sample> s{t::sample(1, Domain::Source, "01", 0), t::sample(1, Domain::Source, "10", 1)};
  EXPECT_THROW(t::dataset(2, s), DatasetError);
  EXPECT_THROW(Dataset({2, 2, 2}, t::class_names(2), {}), DatasetError);
  Sample visible = t::sample(3, Domain::Target, "01", std::nullopt);
  visible.label = 1;
  EXPECT_THROW(t::dataset(2, {visible}), DatasetError);
}

TEST(DatasetTest, RoundTripIsExact) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Dataset src = t::random_dataset(rng, Domain::Source, 40, 6, 3, 5, 0);
    const Dataset tgt = t::random_dataset(rng, Domain::Target, 40, 6, 3, 5, 100);
    std::vector<Sample> mixed(src.samples().begin(), src.samples().end());
    mixed.insert(mixed.end(), tgt.samples().begin(), tgt.samples().end());
    const Dataset both(src.dims(), src.class_names(), mixed);
    const auto dir = t::temp_dir("roundtrip");
    save_dataset(both, dir / "d.jsonl");
    const Dataset back = load_dataset(dir / "d.jsonl");
    EXPECT_EQ(back, both);
    for (std::size_t i = 0; i < both.size(); ++i) {
      EXPECT_EQ(EvalAccess::label_of(back[i]), EvalAccess::label_of(both[i]));
    }
  }
}

TEST(DatasetTest, OneSampleGivesHeaderPlusOneLine) {
  const auto dir = t::temp_dir("one");
  save_dataset(t::dataset(2, {t::sample(9, Domain::Source, "011", 1)}), dir / "d.jsonl");
  std::ifstream in(dir / "d.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 2u);
  EXPECT_THROW(save_dataset(t::dataset(2, {t::sample(9, Domain::Source, "011", 1)}),
                            dir / "no_such_dir" / "d.jsonl"),
               std::runtime_error);
}

TEST(DatasetTest, SplitSizesAndDeterminism) {
  std::mt19937_64 rng(5);
  const Dataset d = t::random_dataset(rng, Domain::Source, 100, 4, 3, 4, 0);
  const auto [a, b] = split(d, 0.8, 7);
  EXPECT_EQ(a.size(), 80u);
  EXPECT_EQ(b.size(), 20u);
  const auto [a2, b2] = split(d, 0.8, 7);
  EXPECT_EQ(a, a2);
  EXPECT_EQ(b, b2);
  for (const auto& s : a.samples()) EXPECT_EQ(b.find(s.id), nullptr);

  const Dataset small = t::random_dataset(rng, Domain::Source, 10, 4, 3, 4, 0);
  try {
    split(small, 0.999, 1);
    FAIL() << "expected empty split";
  } catch (const DatasetError& e) {
    EXPECT_STREQ(e.what(), "empty split");
  }
  EXPECT_THROW(split(small, 1.0, 1), DatasetError);
}

TEST(DatasetTest, SplitIsStratifiedOverVisibleLabels) {
  std::vector<Sample> s;
  for (SampleId i = 0; i < 60; ++i) s.push_back(t::sample(i, Domain::Source, "01", i < 40 ? 0 : 1));
  const auto [a, b] = split(t::dataset(2, s), 0.5, 3);
  std::size_t zeros = 0;
  for (const auto& x : a.samples()) zeros += *x.label == 0;
  EXPECT_EQ(zeros, 20u);
}

TEST(DatasetTest, FilterDomain) {
  const Dataset d = t::dataset(2, {t::sample(1, Domain::Source, "01", 0), t::sample(2, Domain::Target, "01", 1)});
  EXPECT_EQ(filter_domain(d, Domain::Target)->size(), 1u);
  const Dataset only_src = t::dataset(2, {t::sample(1, Domain::Source, "01", 0)});
  EXPECT_FALSE(filter_domain(only_src, Domain::Target).has_value());
}
