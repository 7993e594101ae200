#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "chamferlab/datagen.hpp"
#include "chamferlab/errors.hpp"
#include "chamferlab/io.hpp"

using namespace chamferlab;

namespace {

DatasetSpec small_spec() {
  DatasetSpec s;
  s.classes = 3;
  s.modes = 2;
  s.points_per_class = 60;
  s.seed = 4;
  return s;
}

std::multiset<std::vector<double>> rows_as_multiset(const Matrix& m) {
  std::multiset<std::vector<double>> out;
  for (std::size_t i = 0; i < m.rows(); ++i) out.emplace(m.row(i).begin(), m.row(i).end());
  return out;
}

}  // namespace

TEST(Generate, DegenerateMixtureCollapsesToCentre) {
  DatasetSpec s;
  s.classes = 1;
  s.modes = 1;
  s.spread = 1e-9;
  s.center_scale = 0.0;
  s.points_per_class = 100;
  const LabeledSet set = generate(s);
  for (double v : set.points.data()) EXPECT_NEAR(v, 0.0, 1e-7);
}

TEST(Generate, ClassMeansMatchCentres) {
  DatasetSpec s;
  s.classes = 2;
  s.modes = 1;
  s.spread = 0.3;
  s.points_per_class = 1000;
  s.seed = 12;
  const MixtureLayout layout = mixture_layout(s);
  const LabeledSet set = generate(s);
  for (int c = 0; c < 2; ++c) {
    const auto rows = set.rows_of_class(c);
    const Matrix mean = column_means(set.points.select_rows(rows));
    for (std::size_t d = 0; d < 2; ++d) EXPECT_NEAR(mean(0, d), layout.centers(c, d), 0.1);
  }
}

TEST(Generate, DeterministicFileHash) {
  const auto dir = std::filesystem::temp_directory_path() / "chamferlab_datagen";
  save_labeled_set(dir / "a", generate(small_spec()));
  save_labeled_set(dir / "b", generate(small_spec()));
  EXPECT_EQ(Fnv1a().text(read_text(dir / "a.chlm")).digest(), Fnv1a().text(read_text(dir / "b.chlm")).digest());
  EXPECT_EQ(read_text(dir / "a.labels.csv"), read_text(dir / "b.labels.csv"));
}

TEST(Generate, RejectsBadSpec) {
  DatasetSpec s = small_spec();
  s.modes = 0;
  EXPECT_THROW(generate(s), SpecError);
  s = small_spec();
  s.spread = 0.0;
  EXPECT_THROW(generate(s), SpecError);
  s = small_spec();
  s.dim = 17;
  EXPECT_THROW(generate(s), SpecError);
}

TEST(Generate, CentresRespectSeparation) {
  DatasetSpec s;
  s.min_separation = 2.5;
  const MixtureLayout layout = mixture_layout(s);
  for (std::size_t i = 0; i < layout.centers.rows(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      EXPECT_GE(squared_distance(layout.centers.row(i), layout.centers.row(j)), 2.5 * 2.5);
}

TEST(Generate, GroupShiftTranslatesPoints) {
  DatasetSpec s = small_spec();
  s.groups = 2;
  s.group_shifts = Matrix{{0, 0}, {100, 0}};
  const LabeledSet set = generate(s);
  ASSERT_EQ(set.group_labels.size(), set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set.group_labels[i] == 1) EXPECT_GT(set.points(i, 0), 50.0);
    else EXPECT_LT(set.points(i, 0), 50.0);
  }
}

TEST(Generate, OtherFamiliesProduceLabelledPoints) {
  for (auto family : {DatasetFamily::Rings, DatasetFamily::MoonsPerClass}) {
    DatasetSpec s = small_spec();
    s.family = family;
    s.dim = 3;
    const LabeledSet set = generate(s);
    EXPECT_EQ(set.size(), 180u);
    EXPECT_TRUE(set.points.all_finite());
  }
}

TEST(Generate, DrawSeedChangesPointsNotLayout) {
  DatasetSpec a = small_spec();
  DatasetSpec b = a;
  b.draw_seed = 1;
  EXPECT_EQ(mixture_layout(a).centers, mixture_layout(b).centers);
  EXPECT_NE(generate(a).points, generate(b).points);
}

TEST(Split, ExemplarCountArithmetic) {
  const SplitResult r = split(generate(small_spec()), 2, 1, 20);
  EXPECT_EQ(r.exemplars.points.rows(), 6u);
  EXPECT_EQ(r.exemplars.k, 2u);
}

TEST(Split, DisjointAndComplete) {
  const LabeledSet set = generate(small_spec());
  const SplitResult r = split(set, 5, 9, 20);
  std::set<std::size_t> train(r.train_rows.begin(), r.train_rows.end());
  std::set<std::size_t> val(r.validation_rows.begin(), r.validation_rows.end());
  EXPECT_EQ(train.size() + val.size(), set.size());
  for (std::size_t v : val) EXPECT_FALSE(train.count(v));
  for (std::size_t e : r.exemplar_rows) EXPECT_TRUE(train.count(e));
  for (int c = 0; c < 3; ++c) EXPECT_EQ(r.exemplars.points_of_class(c).rows(), 5u);
}

TEST(Split, BoundaryTakesWholeTrainClass) {
  const LabeledSet set = generate(small_spec());
  const SplitResult r = split(set, 40, 3, 20);
  std::vector<std::size_t> ex = r.exemplar_rows;
  std::sort(ex.begin(), ex.end());
  EXPECT_EQ(ex, r.train_rows);
}

TEST(Split, InsufficientPointsNamesClass) {
  const LabeledSet set = generate(small_spec());
  try {
    split(set, 41, 3, 20);
    FAIL() << "expected SplitError";
  } catch (const SplitError& e) {
    EXPECT_NE(std::string(e.what()).find("class 0"), std::string::npos);
  }
}

TEST(Split, SeedsGiveDifferentValidExemplars) {
  const LabeledSet set = generate(small_spec());
  const SplitResult a = split(set, 4, 1, 20);
  const SplitResult b = split(set, 4, 2, 20);
  EXPECT_NE(a.exemplar_rows, b.exemplar_rows);
  EXPECT_EQ(a.exemplars.points.rows(), b.exemplars.points.rows());
}

TEST(Split, PermutationEquivariant) {
  const LabeledSet set = generate(small_spec());
  std::vector<std::size_t> order(set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = (i * 37) % order.size();  // 37 coprime to 180
  const LabeledSet shuffled = set.subset(order);
  const SplitResult a = split(set, 6, 5, 20);
  const SplitResult b = split(shuffled, 6, 5, 20);
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(rows_as_multiset(a.exemplars.points_of_class(c)), rows_as_multiset(b.exemplars.points_of_class(c)));
  }
  EXPECT_EQ(rows_as_multiset(a.validation.points), rows_as_multiset(b.validation.points));
}

TEST(Persistence, RoundTrip) {
  DatasetSpec s = small_spec();
  s.groups = 3;
  const LabeledSet set = generate(s);
  const auto base = std::filesystem::temp_directory_path() / "chamferlab_datagen" / "rt";
  save_labeled_set(base, set);
  const LabeledSet back = load_labeled_set(base);
  EXPECT_EQ(back.points, set.points);
  EXPECT_EQ(back.class_labels, set.class_labels);
  EXPECT_EQ(back.group_labels, set.group_labels);
  EXPECT_EQ(back.num_classes, 3u);
  EXPECT_EQ(back.num_groups, 3u);
  EXPECT_EQ(read_text(base.string() + ".labels.csv").substr(0, 18), "index,class,group\n");
}

TEST(Persistence, SpecJsonRoundTrip) {
  DatasetSpec s = small_spec();
  s.family = DatasetFamily::Rings;
  s.mode_decay = 0.5;
  const DatasetSpec back = dataset_spec_from_json(to_json(s));
  EXPECT_EQ(to_json(back), to_json(s));
}
