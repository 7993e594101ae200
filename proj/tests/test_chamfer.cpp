#include <gtest/gtest.h>

#include <cmath>

#include "chamferlab/chamfer.hpp"
#include "chamferlab/datagen.hpp"
#include "chamferlab/diffusion.hpp"
#include "chamferlab/errors.hpp"
#include "chamferlab/sampler.hpp"
#include "oracles/naive.hpp"
#include "support.hpp"

using namespace chamferlab;
using testsupport::numeric_grad;
using testsupport::random_matrix;
using testsupport::rel_error;

namespace {

Matrix translate(const Matrix& m, double c) {
  Matrix out = m;
  for (double& v : out.data()) v += c;
  return out;
}

GuidanceConfig identity_guidance(const Matrix& exemplars, double gamma) {
  GuidanceConfig g;
  g.gamma = gamma;
  g.g_freq = 1;
  g.projector = Projector::identity(exemplars.cols());
  g.exemplars = project(g.projector, exemplars, FeatureSource::Real);
  return g;
}

}  // namespace

TEST(Chamfer, SelfDistanceIsZero) {
  const Matrix x = random_matrix(1, 10, 3);
  EXPECT_EQ(chamfer(x, x).total, 0.0);
}

TEST(Chamfer, SingletonHandValue) {
  const ChamferBreakdown b = chamfer(Matrix{{0, 0}}, Matrix{{3, 4}});
  EXPECT_EQ(b.term_real_to_gen, 25.0);
  EXPECT_EQ(b.term_gen_to_real, 25.0);
  EXPECT_EQ(b.total, 50.0);
}

TEST(Chamfer, ExhaustiveOneDimensional) {
  const ChamferBreakdown b = chamfer(Matrix{{0}, {2}}, Matrix{{1}});
  EXPECT_EQ(b.term_real_to_gen, 1.0);
  EXPECT_EQ(b.term_gen_to_real, 1.0);
  EXPECT_EQ(b.total, 2.0);
  EXPECT_EQ(b.nearest_real[0], 0u);  // tie between 0 and 2 goes to the lower index
}

TEST(Chamfer, EmptyAndMismatchedInputs) {
  EXPECT_THROW(chamfer(Matrix(0, 2), Matrix{{1, 2}}), ContractError);
  EXPECT_THROW(chamfer(Matrix{{1, 2}}, Matrix{{1, 2, 3}}), DimensionError);
  const FeatureSet a = project(Projector::identity(2), Matrix{{1, 2}});
  const FeatureSet b = project(Projector::random_linear(2, 2, 3), Matrix{{1, 2}});
  EXPECT_THROW(chamfer(a, b), ProjectorError);
}

TEST(Chamfer, MatchesNaiveOracle) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const Matrix x = random_matrix(s, 3 + s % 20, 1 + s % 6), y = random_matrix(s + 99, 2 + s % 13, 1 + s % 6);
    const ChamferBreakdown b = chamfer(x, y);
    const auto o = naive::chamfer(x, y);
    EXPECT_EQ(b.term_real_to_gen, o.first);
    EXPECT_EQ(b.term_gen_to_real, o.second);
  }
}

TEST(Chamfer, SymmetricInForm) {
  const Matrix x = random_matrix(1, 12, 2), y = random_matrix(2, 7, 2);
  const ChamferBreakdown a = chamfer(x, y), b = chamfer(y, x);
  EXPECT_DOUBLE_EQ(a.total, b.total);
  EXPECT_EQ(a.term_real_to_gen, b.term_gen_to_real);
  EXPECT_EQ(a.term_gen_to_real, b.term_real_to_gen);
}

TEST(Chamfer, TranslationInvariant) {
  // Integer-valued points keep the shifted arithmetic exact.
  Matrix x(9, 3), y(6, 3);
  RngStream rng(4);
  for (double& v : x.data()) v = double(rng.uniform_index(21)) - 10.0;
  for (double& v : y.data()) v = double(rng.uniform_index(21)) - 10.0;
  EXPECT_EQ(chamfer(translate(x, 7.0), translate(y, 7.0)).total, chamfer(x, y).total);
}

TEST(ChamferGrad, ZeroAtMinimum) {
  const Matrix x = random_matrix(1, 6, 2);
  EXPECT_EQ(chamfer_grad(x, x), Matrix(6, 2));
}

TEST(ChamferGrad, SingletonIsFourTimesOffset) {
  const Matrix g = chamfer_grad(Matrix{{1, -1}}, Matrix{{3, 2}});
  EXPECT_EQ(g, (Matrix{{8, 12}}));
}

TEST(ChamferGrad, MatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Matrix x = random_matrix(s, 8, 2), y = random_matrix(s + 500, 5, 2);
    const Matrix numeric = numeric_grad([&](const Matrix& p) { return chamfer(x, p).total; }, y);
    EXPECT_LT(rel_error(chamfer_grad(x, y), numeric), 1e-4) << "seed " << s;
  }
}

TEST(ChamferGrad, SmallStepDecreasesDistance) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix x = random_matrix(s, 10, 3), y = random_matrix(s + 7, 6, 3);
    const Matrix stepped = y - 1e-3 * chamfer_grad(x, y);
    EXPECT_LT(chamfer(x, stepped).total, chamfer(x, y).total);
  }
}

TEST(ChamferGrad, PermutationEquivariant) {
  const Matrix x = random_matrix(3, 10, 2), y = random_matrix(4, 6, 2);
  const std::vector<std::size_t> order{3, 0, 5, 1, 4, 2};
  const Matrix g = chamfer_grad(x, y);
  EXPECT_EQ(chamfer_grad(x, y.select_rows(order)), g.select_rows(order));
}

TEST(Guidance, ZeroGammaIsBitwiseNeutral) {
  const NoiseSchedule s = make_schedule(10, 0.01, 0.2, ScheduleKind::Linear);
  const Matrix x = random_matrix(1, 4, 2), eps = random_matrix(2, 4, 2);
  const std::vector<int> labels(4, 0);
  const GuidanceResult r = guidance_step(x, 5, eps, s, identity_guidance(random_matrix(3, 3, 2), 0.0), {nullptr, labels});
  EXPECT_EQ(r.eps, eps);
  EXPECT_EQ(r.x_t, x);
}

TEST(Guidance, Scheduling) {
  GuidanceConfig g = identity_guidance(Matrix{{0, 0}}, 1.0);
  g.g_freq = 5;
  EXPECT_TRUE(g.scheduled(40));
  EXPECT_TRUE(g.scheduled(5));
  EXPECT_FALSE(g.scheduled(39));
  EXPECT_FALSE(g.scheduled(1));
  g.window = std::make_pair<std::size_t, std::size_t>(1, 35);
  EXPECT_FALSE(g.scheduled(40));
  EXPECT_TRUE(g.scheduled(35));
}

TEST(Guidance, ToyStepMovesTowardExemplar) {
  // One point at 5, one exemplar at 0, ᾱ ≈ 1: the Chamfer gradient is 4·5 and
  // the ε-space factor is γ·√(1−ᾱ)/√ᾱ.
  const NoiseSchedule s({1e-12});
  const double ab = s.alpha_bar(1);
  const double gamma = 0.3;
  const std::vector<int> labels{0};
  const Matrix x{{5}}, eps{{0}};
  const GuidanceResult r = guidance_step(x, 1, eps, s, identity_guidance(Matrix{{0}}, gamma), {nullptr, labels});
  const double expected = gamma * std::sqrt(1 - ab) / std::sqrt(ab) * 4.0 * (5.0 / std::sqrt(ab));
  EXPECT_NEAR(r.eps(0, 0), expected, 1e-12);
  EXPECT_GT(r.eps(0, 0), 0.0);  // larger ε estimate ⇒ x̂_0 moves toward 0
  EXPECT_NEAR(r.grad_xt(0, 0), 20.0, 1e-5);

  GuidanceConfig xt = identity_guidance(Matrix{{0}}, gamma);
  xt.space = GuidanceSpace::Xt;
  const GuidanceResult q = guidance_step(x, 1, eps, s, xt, {nullptr, labels});
  EXPECT_LT(q.x_t(0, 0), 5.0);
  EXPECT_EQ(q.eps, eps);
}

TEST(Guidance, StopGradMatchesFiniteDifferences) {
  const NoiseSchedule s = make_schedule(40, 1e-4, 0.999, ScheduleKind::Cosine);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::size_t t = 5 + seed * 3;
    const Matrix x = random_matrix(seed, 6, 3), eps = random_matrix(seed + 1, 6, 3);
    const Projector p = Projector::random_linear(3, 4, seed);
    GuidanceConfig g;
    g.gamma = 1.0;
    g.g_freq = 1;
    g.projector = p;
    g.exemplars = project(p, random_matrix(seed + 2, 5, 3), FeatureSource::Real);
    const std::vector<int> labels(6, 0);
    const GuidanceResult r = guidance_step(x, t, eps, s, g, {nullptr, labels});
    const Matrix numeric = numeric_grad(
        [&](const Matrix& xt) { return chamfer(g.exemplars.features, p.apply(ddim_x0(xt, eps, t, s))).total; }, x);
    EXPECT_LT(rel_error(r.grad_xt, numeric), 1e-4) << "seed " << seed;
  }
}

TEST(Guidance, FullModeMatchesFiniteDifferences) {
  const NoiseSchedule s = make_schedule(40, 1e-4, 0.999, ScheduleKind::Cosine);
  DenoiserArch arch;
  arch.classes = 2;
  arch.hidden_width = 16;
  arch.hidden_layers = 2;
  DenoiserModel model(arch, 3);
  for (Matrix* m : model.parameters())
    for (double& v : m->data()) v += 0.2 * std::sin(3.0 * double(&v - m->data().data()) + 1.0);
  for (double omega : {1.0, 2.5}) {
    const std::size_t t = 20;
    const Matrix x = random_matrix(7, 5, 2);
    const std::vector<int> labels{0, 1, 1, 0, 1};
    const Matrix cond = model.class_embedding(labels);
    const std::vector<int> nulls(5, model.null_token());
    auto eps_of = [&](const Matrix& xt) {
      const Matrix c = model.predict_with_embedding(xt, t, cond);
      return omega == 1.0 ? c : cfg_combine(c, model.predict(xt, t, nulls), omega);
    };
    GuidanceConfig g = identity_guidance(random_matrix(8, 4, 2), 1.0);
    g.grad_mode = GradMode::Full;
    const GuidanceResult r = guidance_step(x, t, eps_of(x), s, g, {&model, labels, cond, omega});
    const Matrix numeric = numeric_grad(
        [&](const Matrix& xt) { return chamfer(g.exemplars.features, ddim_x0(xt, eps_of(xt), t, s)).total; }, x);
    EXPECT_LT(rel_error(r.grad_xt, numeric), 1e-4) << "omega " << omega;
  }
}

TEST(Guidance, PerClassUsesOwnExemplars) {
  const NoiseSchedule s({1e-12});
  GuidanceConfig g = identity_guidance(Matrix{{0}, {10}}, 1.0);
  g.exemplar_labels = {0, 1};
  g.per_class = true;
  const std::vector<int> labels{0, 1};
  const GuidanceResult r = guidance_step(Matrix{{6}, {6}}, 1, Matrix{{0}, {0}}, s, g, {nullptr, labels});
  EXPECT_GT(r.grad_xt(0, 0), 0.0);  // pulled toward 0
  EXPECT_LT(r.grad_xt(1, 0), 0.0);  // pulled toward 10
}

TEST(Guidance, RejectsForeignExemplarSpace) {
  GuidanceConfig g = identity_guidance(Matrix{{0, 0}}, 1.0);
  g.projector = Projector::random_linear(2, 2, 1);
  EXPECT_THROW(g.validate(), ConfigError);
  g = identity_guidance(Matrix{{0, 0}}, 1.0);
  g.g_freq = 0;
  EXPECT_THROW(g.validate(), ConfigError);
}

TEST(RewardGuidance, IdentityCases) {
  const Matrix eps = random_matrix(1, 3, 2);
  EXPECT_EQ(reward_guidance(eps, random_matrix(2, 3, 2), 0.0, 0.5), eps);
  EXPECT_EQ(reward_guidance(eps, Matrix(3, 2), 2.0, 0.5), eps);
}

TEST(RewardGuidance, EquivalentToGuidanceStep) {
  const NoiseSchedule s = make_schedule(10, 0.01, 0.2, ScheduleKind::Linear);
  const Matrix x = random_matrix(1, 4, 2), eps = random_matrix(2, 4, 2);
  const std::vector<int> labels(4, 0);
  const GuidanceConfig g = identity_guidance(random_matrix(3, 3, 2), 0.7);
  const GuidanceResult r = guidance_step(x, 6, eps, s, g, {nullptr, labels});
  EXPECT_EQ(reward_guidance(eps, -1.0 * r.grad_xt, 0.7, s.alpha_bar(6)), r.eps);
}

TEST(Cads, Endpoints) {
  const CadsParams p;
  EXPECT_EQ(cads_gamma(40, 40, p), 0.0);  // u ≥ τ2
  EXPECT_EQ(cads_gamma(10, 40, p), 1.0);  // u ≤ τ1
  EXPECT_NEAR(cads_gamma(30, 40, p), 0.5, 1e-12);
  const Matrix cond = random_matrix(1, 3, 16);
  RngStream rng(1);
  EXPECT_EQ(cads_anneal(cond, 10, 40, p, rng), cond);
  EXPECT_NE(cads_anneal(cond, 40, 40, p, rng), cond);
}

TEST(Cads, ZeroNoiseScaleIsIdentity) {
  CadsParams p;
  p.noise_scale = 0.0;
  const Matrix cond = random_matrix(1, 3, 16);
  RngStream rng(1);
  for (std::size_t t = 1; t <= 40; ++t) EXPECT_EQ(cads_anneal(cond, t, 40, p, rng), cond);
}

TEST(Cads, InvalidWindow) {
  CadsParams p;
  p.tau1 = 0.9;
  p.tau2 = 0.5;
  RngStream rng(1);
  EXPECT_THROW(cads_anneal(Matrix{{1}}, 1, 4, p, rng), ConfigError);
}

TEST(Guidance, CollapsedModelMovesTowardExemplars) {
  // Model trained on a single mode; exemplars sit at a second, unseen mode.
  DatasetSpec spec;
  spec.classes = 1;
  spec.modes = 1;
  spec.points_per_class = 600;
  spec.seed = 2;
  const LabeledSet data = generate(spec);
  const NoiseSchedule s = make_schedule(40, 1e-4, 0.999, ScheduleKind::Cosine);
  DenoiserArch arch;
  arch.classes = 1;
  arch.hidden_width = 32;
  TrainConfig tc;
  tc.steps = 600;
  const DenoiserModel model = train(DenoiserModel(arch, 1), data, s, tc).model;
  const Matrix centre = column_means(data.points);
  Matrix exemplars(4, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    exemplars(i, 0) = centre(0, 0) + 3.0 + 0.1 * double(i);
    exemplars(i, 1) = centre(0, 1);
  }
  const std::vector<int> labels(64, 0);
  SamplingConfig plain, guided;
  GuidanceConfig g = identity_guidance(exemplars, 0.5);
  g.g_freq = 5;
  g.space = GuidanceSpace::Xt;
  g.window = std::make_pair<std::size_t, std::size_t>(1, 35);
  guided.guidance = g;
  RngStream a(3), b(3);
  const Matrix base = sample(model, s, labels, plain, a);
  const Matrix moved = sample(model, s, labels, guided, b);
  EXPECT_LT(chamfer(exemplars, moved).total, chamfer(exemplars, base).total);
}
