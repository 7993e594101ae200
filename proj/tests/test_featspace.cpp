#include <gtest/gtest.h>

#include <filesystem>

#include "chamferlab/errors.hpp"
#include "chamferlab/featspace.hpp"
#include "chamferlab/nn.hpp"
#include "support.hpp"

using namespace chamferlab;
using testsupport::numeric_grad;
using testsupport::random_matrix;
using testsupport::rel_error;

namespace {

Projector random_encoder(std::uint64_t seed, std::size_t in, bool l2 = false) {
  RngStream rng(seed, 3);
  std::vector<Linear> layers;
  layers.push_back(make_linear(in, 12, rng, 1.0));
  layers.push_back(make_linear(12, 6, rng, 1.0));
  for (auto& l : layers)
    for (double& b : l.bias.data()) b = rng.normal() * 0.1;
  return Projector::encoder(layers, l2);
}

double vjp_error(const Projector& p, const Matrix& x, const Matrix& up) {
  const Matrix analytic = project_vjp(p, x, up);
  const Matrix numeric = numeric_grad([&](const Matrix& b) { return sum(hadamard(p.apply(b), up)); }, x);
  return rel_error(analytic, numeric);
}

}  // namespace

TEST(Project, IdentityReturnsInput) {
  const Matrix x = random_matrix(1, 9, 3);
  const FeatureSet f = project(Projector::identity(3), x);
  EXPECT_EQ(f.features, x);
  EXPECT_EQ(f.source, FeatureSource::Generated);
}

TEST(Project, SwapMatrixByHand) {
  const Projector p = Projector::linear(Matrix{{0, 1}, {1, 0}});
  EXPECT_EQ(p.apply(Matrix{{3, 4}}), (Matrix{{4, 3}}));
}

TEST(Project, IdsFollowParameters) {
  EXPECT_EQ(Projector::random_linear(4, 3, 9).id(), Projector::random_linear(4, 3, 9).id());
  EXPECT_NE(Projector::random_linear(4, 3, 9).id(), Projector::random_linear(4, 3, 10).id());
  EXPECT_NE(Projector::identity(3).id(), Projector::identity(3, true).id());
  EXPECT_NE(Projector::identity(2).id(), Projector::linear(Matrix::identity(2)).id());
}

TEST(Project, DimensionMismatchThrows) {
  EXPECT_THROW(project(Projector::identity(3), Matrix(2, 2)), ProjectorError);
}

TEST(Project, MixedSpacesRejected) {
  const FeatureSet a = project(Projector::identity(2), Matrix(2, 2));
  const FeatureSet b = project(Projector::linear(Matrix{{2, 0}, {0, 2}}), Matrix(2, 2));
  EXPECT_THROW(require_same_space(a, b, "test"), ProjectorError);
  EXPECT_NO_THROW(require_same_space(a, a, "test"));
}

TEST(Project, LipschitzBoundForLinear) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Projector p = Projector::random_linear(5, 4, s);
    const double norm = spectral_norm(p.weight());
    const Matrix a = random_matrix(s + 10, 1, 5), b = random_matrix(s + 20, 1, 5);
    const double lhs = std::sqrt(squared_distance(p.apply(a).row(0), p.apply(b).row(0)));
    EXPECT_LE(lhs, norm * std::sqrt(squared_distance(a.row(0), b.row(0))) * (1 + 1e-9));
  }
}

TEST(ProjectVjp, IdentityPassesUpstream) {
  const Matrix up = random_matrix(2, 5, 3);
  EXPECT_EQ(project_vjp(Projector::identity(3), random_matrix(1, 5, 3), up), up);
}

TEST(ProjectVjp, LinearIsUpstreamTimesWeightTranspose) {
  const Projector p = Projector::random_linear(4, 3, 2);
  const Matrix up = random_matrix(5, 6, 3);
  const Matrix x = random_matrix(6, 6, 4);
  EXPECT_LT(max_abs_diff(project_vjp(p, x, up), matmul_nt(up, p.weight())), 1e-14);
  EXPECT_LT(vjp_error(p, x, up), 1e-4);
}

TEST(ProjectVjp, EncoderAndNormalisedKindsMatchFiniteDifferences) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Matrix x = random_matrix(s, 7, 3);
    const Matrix up6 = random_matrix(s + 50, 7, 6);
    EXPECT_LT(vjp_error(random_encoder(s, 3), x, up6), 1e-4);
    EXPECT_LT(vjp_error(random_encoder(s, 3, true), x, up6), 1e-4);
    EXPECT_LT(vjp_error(Projector::random_linear(3, 5, s, true), x, random_matrix(s + 60, 7, 5)), 1e-4);
  }
}

TEST(Projector, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "chamferlab_featspace";
  for (const Projector& p : {Projector::identity(3), Projector::random_linear(3, 2, 1, true), random_encoder(4, 3)}) {
    p.save(dir / "p.json");
    const Projector back = Projector::load(dir / "p.json");
    EXPECT_EQ(back.id(), p.id());
    const Matrix x = random_matrix(3, 4, 3);
    EXPECT_EQ(back.apply(x), p.apply(x));
  }
}

TEST(FeatureSetIo, RoundTrip) {
  const FeatureSet f = project(Projector::random_linear(3, 2, 1), random_matrix(2, 10, 3), FeatureSource::Real);
  const auto base = std::filesystem::temp_directory_path() / "chamferlab_featspace" / "feats";
  save_feature_set(base, f);
  const FeatureSet back = load_feature_set(base);
  EXPECT_EQ(back.features, f.features);
  EXPECT_EQ(back.projector_id, f.projector_id);
  EXPECT_EQ(back.source, FeatureSource::Real);
}

TEST(Knn, SelfQueryFindsItself) {
  const Matrix pts = random_matrix(3, 20, 2);
  const NeighborIndex idx(pts);
  const KnnResult r = idx.knn(pts.select_rows(std::vector<std::size_t>{7}), 1);
  EXPECT_EQ(r.index(0, 0), 7u);
  EXPECT_EQ(r.sq_distance(0, 0), 0.0);
}

TEST(Knn, OneDimensionalHandExample) {
  // The grid needs D ≥ 2, so pad a zero column.
  const Matrix pts{{0, 0}, {3, 0}, {10, 0}};
  for (auto strategy : {NeighborStrategy::Brute, NeighborStrategy::CellGrid}) {
    const KnnResult r = NeighborIndex(pts, strategy).knn(Matrix{{4, 0}}, 2);
    EXPECT_EQ(r.index(0, 0), 1u);
    EXPECT_EQ(r.index(0, 1), 0u);
    EXPECT_EQ(r.sq_distance(0, 0), 1.0);
    EXPECT_EQ(r.sq_distance(0, 1), 16.0);
  }
}

TEST(Knn, TooLargeK) {
  const NeighborIndex idx(Matrix{{0, 0}, {1, 1}});
  EXPECT_THROW(idx.knn(Matrix{{0, 0}}, 3), RangeError);
  EXPECT_THROW(idx.knn_self(2), RangeError);
}

TEST(Knn, TiesGoToLowerIndex) {
  const Matrix pts{{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  for (auto strategy : {NeighborStrategy::Brute, NeighborStrategy::CellGrid}) {
    const KnnResult r = NeighborIndex(pts, strategy).knn(Matrix{{0, 0}}, 4);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(r.index(0, j), j);
  }
}

TEST(Knn, GridEqualsBrute) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    for (std::size_t dim : {2, 3}) {
      Matrix pts = random_matrix(s, 64, dim, 1.0 + double(s));
      // Duplicates and a far outlier exercise ties and sparse cells.
      for (std::size_t d = 0; d < dim; ++d) pts(5, d) = pts(9, d);
      pts(0, 0) = 500.0;
      const Matrix queries = random_matrix(s + 100, 30, dim, 2.0 + double(s));
      const NeighborIndex brute(pts, NeighborStrategy::Brute), grid(pts, NeighborStrategy::CellGrid);
      for (std::size_t k : {1, 5, 64}) {
        const KnnResult a = brute.knn(queries, k), b = grid.knn(queries, k);
        EXPECT_EQ(a.indices, b.indices);
        EXPECT_EQ(a.sq_distances, b.sq_distances);
      }
      EXPECT_EQ(brute.knn_self(5).indices, grid.knn_self(5).indices);
    }
  }
}

TEST(Knn, HighDimensionUsesBrute) {
  EXPECT_EQ(NeighborIndex(random_matrix(1, 10, 5)).strategy(), NeighborStrategy::Brute);
  EXPECT_EQ(NeighborIndex(random_matrix(1, 2000, 2)).strategy(), NeighborStrategy::CellGrid);
}

TEST(Knn, StorageOrderInvariantWithoutTies) {
  const Matrix pts = random_matrix(4, 50, 2);
  std::vector<std::size_t> order(50);
  for (std::size_t i = 0; i < 50; ++i) order[i] = (i * 7) % 50;
  const Matrix shuffled = pts.select_rows(order);
  const Matrix q = random_matrix(5, 10, 2);
  const KnnResult a = NeighborIndex(pts).knn(q, 4), b = NeighborIndex(shuffled).knn(q, 4);
  for (std::size_t i = 0; i < a.indices.size(); ++i) EXPECT_EQ(a.indices[i], order[b.indices[i]]);
}
