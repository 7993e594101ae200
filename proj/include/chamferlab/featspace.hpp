#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "chamferlab/matrix.hpp"
#include "chamferlab/nn.hpp"

namespace chamferlab {

enum class ProjectorKind { Identity, RandomLinear, TrainedEncoder };
enum class FeatureSource { Real, Generated };

std::string projector_kind_name(ProjectorKind kind);
std::string feature_source_name(FeatureSource source);

// Maps raw points into the representation space where set distances and
// metrics are computed. Immutable once built.
class Projector {
 public:
  static Projector identity(std::size_t dim, bool l2_normalize = false);
  static Projector linear(Matrix weight, bool l2_normalize = false);
  // weight d×out with N(0, 1/d) entries.
  static Projector random_linear(std::size_t dim, std::size_t out_dim, std::uint64_t seed, bool l2_normalize = false);
  // SiLU-activated hidden stack (e.g. the first layers of a classifier).
  static Projector encoder(std::vector<Linear> layers, bool l2_normalize = false);

  ProjectorKind kind() const { return kind_; }
  std::size_t in_dim() const { return in_dim_; }
  std::size_t out_dim() const { return out_dim_; }
  bool l2_normalize() const { return l2_normalize_; }
  std::uint64_t id() const { return id_; }
  const Matrix& weight() const { return weight_; }
  const std::vector<Linear>& layers() const { return layers_; }

  Matrix apply(const Matrix& batch) const;
  // upstream·∂f/∂batch, row-wise.
  Matrix vjp(const Matrix& batch, const Matrix& upstream) const;

  void save(const std::filesystem::path& file) const;
  static Projector load(const std::filesystem::path& file);

 private:
  Projector() = default;
  void finalize();
  Matrix raw(const Matrix& batch) const;
  Matrix raw_vjp(const Matrix& batch, const Matrix& upstream) const;

  ProjectorKind kind_ = ProjectorKind::Identity;
  std::size_t in_dim_ = 0;
  std::size_t out_dim_ = 0;
  bool l2_normalize_ = false;
  Matrix weight_;
  std::vector<Linear> layers_;
  std::uint64_t id_ = 0;
};

struct FeatureSet {
  Matrix features;
  std::uint64_t projector_id = 0;
  FeatureSource source = FeatureSource::Real;

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  FeatureSet select(std::span<const std::size_t> rows) const;
};

FeatureSet project(const Projector& p, const Matrix& batch, FeatureSource source = FeatureSource::Generated);
Matrix project_vjp(const Projector& p, const Matrix& batch, const Matrix& upstream);

// Throws ProjectorError when the two sets were produced by different projectors.
void require_same_space(const FeatureSet& a, const FeatureSet& b, const char* op);

// <base>.chlm features plus <base>.json {projector_id, source}.
void save_feature_set(const std::filesystem::path& base, const FeatureSet& set);
FeatureSet load_feature_set(const std::filesystem::path& base);

enum class NeighborStrategy { Brute, CellGrid, Auto };

struct KnnResult {
  std::size_t k = 0;
  std::vector<std::size_t> indices;  // queries·k, row-major
  std::vector<double> sq_distances;  // queries·k, ascending per query

  std::size_t index(std::size_t q, std::size_t j) const { return indices[q * k + j]; }
  double sq_distance(std::size_t q, std::size_t j) const { return sq_distances[q * k + j]; }
};

// Exact k-nearest-neighbour search under squared Euclidean distance, ties
// broken by lower backing index. The cell grid (D ≤ 3) returns exactly the
// brute-force answer.
class NeighborIndex {
 public:
  explicit NeighborIndex(Matrix points, NeighborStrategy strategy = NeighborStrategy::Auto);

  NeighborStrategy strategy() const { return strategy_; }
  const Matrix& points() const { return points_; }

  KnnResult knn(const Matrix& queries, std::size_t k) const;
  // k nearest among the backing points for every backing point, itself excluded.
  KnnResult knn_self(std::size_t k) const;

 private:
  void knn_one(std::span<const double> q, std::size_t k, std::size_t exclude, std::size_t* out_idx, double* out_d) const;
  void brute_one(std::span<const double> q, std::size_t k, std::size_t exclude, std::size_t* out_idx, double* out_d) const;
  void grid_one(std::span<const double> q, std::size_t k, std::size_t exclude, std::size_t* out_idx, double* out_d) const;
  std::int64_t cell_key(const std::array<std::int64_t, 3>& c) const;
  std::array<std::int64_t, 3> cell_of(std::span<const double> p) const;

  Matrix points_;
  NeighborStrategy strategy_;
  double cell_size_ = 1.0;
  std::array<double, 3> origin_{};
  std::array<std::int64_t, 3> extent_{};
  std::unordered_map<std::int64_t, std::vector<std::size_t>> cells_;
};

}  // namespace chamferlab
