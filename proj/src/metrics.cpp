#include "chamferlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "chamferlab/chamfer.hpp"
#include "chamferlab/eig.hpp"
#include "chamferlab/errors.hpp"

namespace chamferlab {
namespace {

constexpr double kCovRegularizer = 1e-6;

void check_sizes(const FeatureSet& real, const FeatureSet& gen, std::size_t k, const char* op) {
  require_same_space(real, gen, op);
  if (real.size() <= k || gen.size() <= k) {
    throw MetricError(std::string(op) + ": both sets need more than k=" + std::to_string(k) + " points (real " +
                      std::to_string(real.size()) + ", gen " + std::to_string(gen.size()) + ")");
  }
}

// Squared k-NN radii; comparisons stay in squared distance throughout.
std::vector<double> squared_radii(const Matrix& points, std::size_t k) {
  const NeighborIndex index(points);
  const KnnResult nn = index.knn_self(k);
  std::vector<double> r(points.rows());
  for (std::size_t i = 0; i < points.rows(); ++i) r[i] = nn.sq_distance(i, k - 1);
  return r;
}

// Fraction of `queries` inside the union of balls B(center_i, r_i).
double fraction_inside(const Matrix& queries, const Matrix& centers, const std::vector<double>& sq_radii) {
  std::size_t inside = 0;
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    for (std::size_t i = 0; i < centers.rows(); ++i) {
      if (squared_distance(queries.row(q), centers.row(i)) <= sq_radii[i]) {
        ++inside;
        break;
      }
    }
  }
  return double(inside) / double(queries.rows());
}

}  // namespace

std::vector<double> manifold_radii(const Matrix& points, std::size_t k) {
  std::vector<double> r = squared_radii(points, k);
  for (double& v : r) v = std::sqrt(v);
  return r;
}

PrecisionRecall precision_recall(const FeatureSet& real, const FeatureSet& gen, std::size_t k) {
  check_sizes(real, gen, k, "precision_recall");
  const auto real_r = squared_radii(real.features, k);
  const auto gen_r = squared_radii(gen.features, k);
  return {fraction_inside(gen.features, real.features, real_r), fraction_inside(real.features, gen.features, gen_r)};
}

DensityCoverage density_coverage(const FeatureSet& real, const FeatureSet& gen, std::size_t k) {
  check_sizes(real, gen, k, "density_coverage");
  const auto real_r = squared_radii(real.features, k);
  std::size_t hits = 0;
  for (std::size_t j = 0; j < gen.size(); ++j)
    for (std::size_t i = 0; i < real.size(); ++i)
      if (squared_distance(gen.features.row(j), real.features.row(i)) <= real_r[i]) ++hits;

  // Coverage: the nearest generated point must lie in the real point's ball.
  const NeighborIndex gen_index(gen.features);
  const KnnResult nearest = gen_index.knn(real.features, 1);
  std::size_t covered = 0;
  for (std::size_t i = 0; i < real.size(); ++i)
    if (nearest.sq_distance(i, 0) <= real_r[i]) ++covered;

  return {double(hits) / (double(k) * double(gen.size())), double(covered) / double(real.size())};
}

double f1_pc(double precision, double coverage) {
  if (!(precision >= 0.0 && precision <= 1.0) || !(coverage >= 0.0 && coverage <= 1.0)) {
    throw ContractError("f1_pc: inputs must lie in [0, 1]");
  }
  if (precision + coverage == 0.0) return 0.0;
  return 2.0 * precision * coverage / (precision + coverage);
}

GaussianStats gaussian_stats(const Matrix& points) { return {column_means(points), covariance(points)}; }

double frechet_from_stats(const GaussianStats& a, const GaussianStats& b) {
  const std::size_t D = a.covariance.rows();
  if (b.covariance.rows() != D || a.mean.cols() != D || b.mean.cols() != D) throw DimensionError("frechet: dimension mismatch");
  Matrix sa = a.covariance;
  Matrix sb = b.covariance;
  // Offset only near-singular fits; well-conditioned inputs stay exact.
  auto min_eig = [](const Matrix& m) { return sym_eig(m).eigenvalues(0, m.rows() - 1); };
  if (D > 0 && std::min(min_eig(sa), min_eig(sb)) < kCovRegularizer) {
    for (std::size_t i = 0; i < D; ++i) {
      sa(i, i) += kCovRegularizer;
      sb(i, i) += kCovRegularizer;
    }
  }
  double mean_term = 0.0;
  for (std::size_t i = 0; i < D; ++i) {
    const double d = a.mean(0, i) - b.mean(0, i);
    mean_term += d * d;
  }
  const Matrix root_a = sqrtm_psd(sa);
  Matrix inner = matmul(matmul(root_a, sb), root_a);
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = i + 1; j < D; ++j) inner(i, j) = inner(j, i) = 0.5 * (inner(i, j) + inner(j, i));
  const SymEig e = sym_eig(inner);
  double trace_root = 0.0;
  for (std::size_t i = 0; i < D; ++i) trace_root += std::sqrt(std::max(e.eigenvalues(0, i), 0.0));
  double trace = 0.0;
  for (std::size_t i = 0; i < D; ++i) trace += sa(i, i) + sb(i, i);
  const double fd = mean_term + trace - 2.0 * trace_root;
  if (!std::isfinite(fd)) throw NumericalError("frechet: non-finite result");
  return std::max(fd, 0.0);
}

double frechet(const FeatureSet& a, const FeatureSet& b) {
  require_same_space(a, b, "frechet");
  if (a.size() < 2 || b.size() < 2) throw MetricError("frechet: need at least two points per set");
  return frechet_from_stats(gaussian_stats(a.features), gaussian_stats(b.features));
}

namespace {

MetricsReport evaluate_flat(const FeatureSet& real, const FeatureSet& gen, std::size_t k) {
  MetricsReport r;
  const PrecisionRecall pr = precision_recall(real, gen, k);
  const DensityCoverage dc = density_coverage(real, gen, k);
  r.precision = pr.precision;
  r.recall = pr.recall;
  r.density = dc.density;
  r.coverage = dc.coverage;
  r.f1_pc = f1_pc(r.precision, r.coverage);
  r.frechet = frechet(real, gen);
  r.chamfer = chamfer(real, gen).total;
  r.knn_k = k;
  r.n_real = real.size();
  r.n_gen = gen.size();
  return r;
}

std::vector<std::size_t> rows_with(std::span<const int> labels, int g) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == g) rows.push_back(i);
  return rows;
}

}  // namespace

MetricsReport evaluate(const FeatureSet& real, const FeatureSet& gen, std::size_t k, std::span<const int> real_groups,
                       std::span<const int> gen_groups) {
  MetricsReport report = evaluate_flat(real, gen, k);
  if (real_groups.empty() && gen_groups.empty()) return report;
  if (real_groups.size() != real.size() || gen_groups.size() != gen.size()) {
    throw MetricError("evaluate: group labels must cover every real and generated row");
  }
  std::set<int> groups(real_groups.begin(), real_groups.end());
  groups.insert(gen_groups.begin(), gen_groups.end());
  for (int g : groups) {
    const auto rr = rows_with(real_groups, g);
    const auto gr = rows_with(gen_groups, g);
    if (rr.size() <= k || gr.size() <= k) {
      throw MetricError("evaluate: group " + std::to_string(g) + " has " + std::to_string(rr.size()) + " real and " +
                        std::to_string(gr.size()) + " generated points, needs more than k=" + std::to_string(k));
    }
    report.per_group[g] = evaluate_flat(real.select(rr), gen.select(gr), k);
  }
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& [g, r] : report.per_group) {
    if (r.f1_pc < worst) {
      worst = r.f1_pc;
      report.worst_group = g;
    }
  }
  return report;
}

nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["density"] = r.density;
  j["coverage"] = r.coverage;
  j["f1_pc"] = r.f1_pc;
  j["frechet"] = r.frechet;
  j["chamfer"] = r.chamfer;
  j["knn_k"] = r.knn_k;
  j["n_real"] = r.n_real;
  j["n_gen"] = r.n_gen;
  if (r.worst_group) j["worst_group"] = *r.worst_group;
  if (!r.per_group.empty()) {
    nlohmann::ordered_json groups;
    for (const auto& [g, sub] : r.per_group) groups[std::to_string(g)] = to_json(sub);
    j["per_group"] = groups;
  }
  return j;
}

}  // namespace chamferlab
