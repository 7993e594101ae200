#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "chamferlab/featspace.hpp"

namespace chamferlab {

inline constexpr std::size_t kDefaultMetricK = 5;

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

struct DensityCoverage {
  double density = 0.0;
  double coverage = 0.0;
};

struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double density = 0.0;
  double coverage = 0.0;
  double f1_pc = 0.0;
  double frechet = 0.0;
  double chamfer = 0.0;
  std::size_t knn_k = kDefaultMetricK;
  std::size_t n_real = 0;
  std::size_t n_gen = 0;
  std::map<int, MetricsReport> per_group;
  std::optional<int> worst_group;
};

// Distance from every point to its k-th nearest neighbour in the same set, self excluded.
std::vector<double> manifold_radii(const Matrix& points, std::size_t k);

PrecisionRecall precision_recall(const FeatureSet& real, const FeatureSet& gen, std::size_t k = kDefaultMetricK);
DensityCoverage density_coverage(const FeatureSet& real, const FeatureSet& gen, std::size_t k = kDefaultMetricK);

// Harmonic mean of precision and coverage; 0 when both are 0.
double f1_pc(double precision, double coverage);

struct GaussianStats {
  Matrix mean;        // 1×D
  Matrix covariance;  // D×D
};

GaussianStats gaussian_stats(const Matrix& points);
// ‖μ_a−μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2}), both Σ offset by
// +1e-6·I when either has an eigenvalue below 1e-6.
double frechet_from_stats(const GaussianStats& a, const GaussianStats& b);
double frechet(const FeatureSet& a, const FeatureSet& b);

// Overall report plus, when group labels are given, one report per group and
// the worst group by f1_pc.
MetricsReport evaluate(const FeatureSet& real, const FeatureSet& gen, std::size_t k = kDefaultMetricK,
                       std::span<const int> real_groups = {}, std::span<const int> gen_groups = {});

nlohmann::ordered_json to_json(const MetricsReport& report);

}  // namespace chamferlab
